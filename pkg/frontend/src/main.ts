/** Browser artboard: place/move/resize category chips, live layout
 * preview with a coverage badge, on-demand synthesis, and a perturbation
 * demo panel. All rendering state lives in ArtboardState; all network
 * traffic goes through the debounced LayoutScheduler (layouts) or a
 * single-flight synthesize call.
 */

import {
  getCategories,
  postLayout,
  postSynthesize,
  ServiceError,
  type CategoryInfo,
} from "./api.js";
import { LayoutScheduler } from "./scheduler.js";
import { ArtboardState, type LayoutResponse } from "./state.js";

const CHIP_COLORS = [
  "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
  "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

class Artboard {
  state: ArtboardState;
  categories: CategoryInfo[] = [];
  scheduler: LayoutScheduler<LayoutResponse>;
  synthesizing = false;

  board: HTMLDivElement;
  preview: HTMLImageElement;
  image: HTMLImageElement;
  coverageBadge: HTMLSpanElement;
  errorBar: HTMLDivElement;
  palette: HTMLDivElement;
  sizeSlider: HTMLInputElement;
  synthButton: HTMLButtonElement;
  rerollButton: HTMLButtonElement;
  perturbPanel: HTMLDivElement;

  constructor(private root: HTMLElement) {
    this.state = new ArtboardState(64, 64);
    this.scheduler = new LayoutScheduler<LayoutResponse>({
      onResult: (r) => this.applyLayout(r),
      onError: (e) => this.showError(e),
    });

    this.palette = el("div", "palette");
    this.board = el("div", "board");
    this.preview = el("img", "preview");
    this.image = el("img", "generated");
    this.coverageBadge = el("span", "badge", "coverage: –");
    this.errorBar = el("div", "error-bar");
    this.sizeSlider = el("input", "size-slider");
    this.sizeSlider.type = "range";
    this.sizeSlider.min = "1";
    this.sizeSlider.max = "25";
    this.synthButton = el("button", "", "synthesize");
    this.rerollButton = el("button", "", "reroll style");
    this.perturbPanel = el("div", "perturb-panel");

    this.layoutDom();
    this.wireEvents();
    void this.loadCategories();
  }

  private layoutDom(): void {
    const left = el("div", "column");
    left.append(this.palette, this.board, this.sizeSlider, this.errorBar);
    const right = el("div", "column");
    const controls = el("div", "controls");
    controls.append(this.synthButton, this.rerollButton, this.coverageBadge);
    right.append(this.preview, controls, this.image, this.perturbPanel);
    this.root.append(left, right);
  }

  private async loadCategories(): Promise<void> {
    const resp = await getCategories();
    this.categories = resp.categories;
    this.state.sizeMax = resp.size_max;
    this.sizeSlider.max = String(resp.size_max);
    for (const cat of this.categories) {
      const chip = el("button", "chip", `${cat.name} (${cat.kind})`);
      chip.style.background = CHIP_COLORS[cat.id % CHIP_COLORS.length];
      chip.onclick = () => {
        this.state.place(cat.id, 0.5, 0.5);
        this.render();
        this.refreshLayout();
      };
      this.palette.append(chip);
    }
  }

  private wireEvents(): void {
    this.sizeSlider.oninput = () => {
      if (this.state.selectedId === null) return;
      this.state.resize(this.state.selectedId, Number(this.sizeSlider.value));
      this.render();
      this.refreshLayout();
    };
    this.synthButton.onclick = () => void this.synthesizeNow();
    this.rerollButton.onclick = () => {
      this.state.rerollSeed();
      void this.synthesizeNow();
    };
  }

  /** One debounced /layout refresh; stale responses are discarded. */
  refreshLayout(): void {
    const scene = this.state.toScene();
    const seed = this.state.latentSeed;
    this.scheduler.request(() => postLayout(scene, seed));
  }

  private applyLayout(resp: LayoutResponse): void {
    this.state.lastLayout = resp;
    this.preview.src = `data:image/png;base64,${resp.layout_png}`;
    this.coverageBadge.textContent = `coverage: ${resp.coverage.toFixed(1)}`;
    this.errorBar.textContent = "";
  }

  async synthesizeNow(): Promise<void> {
    if (!this.state.canSynthesize || this.synthesizing) return;
    this.synthesizing = true;
    this.synthButton.disabled = true;
    this.synthButton.textContent = "synthesizing…";
    try {
      const resp = await postSynthesize(this.state.toScene(), this.state.latentSeed);
      if (resp.image_png) {
        this.state.lastImage = resp.image_png;
        this.image.src = `data:image/png;base64,${resp.image_png}`;
      }
    } catch (e) {
      this.showError(e);
    } finally {
      this.synthesizing = false;
      this.synthButton.disabled = !this.state.canSynthesize;
      this.synthButton.textContent = "synthesize";
    }
  }

  /** Side-by-side original vs server-perturbed layout at range r. */
  async perturbationDemo(r: number, seed = 0): Promise<void> {
    const scene = this.state.toScene();
    const [orig, pert] = await Promise.all([
      postLayout(scene, this.state.latentSeed),
      postLayout(scene, this.state.latentSeed, { perturbRange: r, perturbSeed: seed }),
    ]);
    this.perturbPanel.replaceChildren(
      this.panel(`original (cov ${orig.coverage.toFixed(1)})`, orig.layout_png),
      this.panel(`r=${r} (cov ${pert.coverage.toFixed(1)})`, pert.layout_png),
    );
  }

  private panel(label: string, png: string): HTMLElement {
    const box = el("div", "panel");
    const img = el("img");
    img.src = `data:image/png;base64,${png}`;
    box.append(img, el("div", "label", label));
    return box;
  }

  private showError(e: unknown): void {
    this.errorBar.textContent =
      e instanceof ServiceError ? `${e.body.error}: ${e.body.detail}` : String(e);
  }

  /** Re-render chips on the board from state. */
  render(): void {
    this.board.replaceChildren();
    for (const obj of this.state.objects) {
      const chip = el("div", "placed-chip");
      chip.style.left = `${obj.cx * 100}%`;
      chip.style.top = `${obj.cy * 100}%`;
      chip.style.background = CHIP_COLORS[obj.category % CHIP_COLORS.length];
      chip.style.transform = `translate(-50%, -50%) scale(${0.5 + obj.size / 25})`;
      if (obj.id === this.state.selectedId) chip.classList.add("selected");
      chip.textContent = this.categories.find((c) => c.id === obj.category)?.name ?? "?";
      this.attachDrag(chip, obj.id);
      this.board.append(chip);
    }
    this.synthButton.disabled = !this.state.canSynthesize || this.synthesizing;
  }

  private attachDrag(chip: HTMLElement, id: number): void {
    chip.onpointerdown = (down) => {
      down.preventDefault();
      this.state.selectedId = id;
      this.sizeSlider.value = String(this.state.get(id).size);
      chip.setPointerCapture(down.pointerId);
      const rect = this.board.getBoundingClientRect();
      chip.onpointermove = (move) => {
        this.state.move(
          id,
          (move.clientX - rect.left) / rect.width,
          (move.clientY - rect.top) / rect.height,
        );
        this.render();
        this.refreshLayout(); // debounced: one request per settled drag
      };
      chip.onpointerup = () => {
        chip.onpointermove = null;
        this.refreshLayout();
      };
    };
  }
}

const root = document.getElementById("app");
if (root) new Artboard(root);

export { Artboard };
