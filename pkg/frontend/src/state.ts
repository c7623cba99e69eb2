/** Artboard state: the client-side mirror of a scene.
 *
 * Serialization contract: `toScene` produces exactly the Scene JSON the
 * server accepts — object order preserved, no extra fields, numbers
 * untouched.
 */

export interface PlacedObject {
  id: number; // client-side only, never serialized
  category: number;
  cx: number;
  cy: number;
  size: number;
}

export interface SceneJson {
  canvas: { h: number; w: number };
  objects: { category: number; cx: number; cy: number; size: number }[];
}

export interface LayoutResponse {
  layout_png: string;
  coverage: number;
  boxes: { index: number; category: number | null; cx: number; cy: number; h: number; w: number }[];
  timing_ms: number;
}

export interface SynthesizeResponse extends Partial<LayoutResponse> {
  image_png?: string;
  coverage: number;
}

export class ArtboardState {
  objects: PlacedObject[] = [];
  selectedId: number | null = null;
  canvasH: number;
  canvasW: number;
  latentSeed = 0;
  sizeMax: number;

  lastLayout: LayoutResponse | null = null;
  lastImage: string | null = null;

  private nextId = 1;

  constructor(canvasH = 64, canvasW = 64, sizeMax = 25) {
    this.canvasH = canvasH;
    this.canvasW = canvasW;
    this.sizeMax = sizeMax;
  }

  place(category: number, cx: number, cy: number, size = 9): PlacedObject {
    const obj: PlacedObject = {
      id: this.nextId++,
      category,
      cx: clamp01(cx),
      cy: clamp01(cy),
      size: this.clampSize(size),
    };
    this.objects.push(obj);
    this.selectedId = obj.id;
    return obj;
  }

  move(id: number, cx: number, cy: number): void {
    const obj = this.get(id);
    obj.cx = clamp01(cx);
    obj.cy = clamp01(cy);
  }

  resize(id: number, size: number): void {
    this.get(id).size = this.clampSize(size);
  }

  remove(id: number): void {
    this.objects = this.objects.filter((o) => o.id !== id);
    if (this.selectedId === id) this.selectedId = null;
  }

  get(id: number): PlacedObject {
    const obj = this.objects.find((o) => o.id === id);
    if (!obj) throw new Error(`no object with id ${id}`);
    return obj;
  }

  rerollSeed(): number {
    this.latentSeed = (Math.random() * 2 ** 31) | 0;
    return this.latentSeed;
  }

  get canSynthesize(): boolean {
    return this.objects.length > 0;
  }

  /** Exact Scene JSON accepted by POST /layout and POST /synthesize. */
  toScene(): SceneJson {
    return {
      canvas: { h: this.canvasH, w: this.canvasW },
      objects: this.objects.map((o) => ({
        category: o.category,
        cx: o.cx,
        cy: o.cy,
        size: o.size,
      })),
    };
  }

  /** Restore from Scene JSON (round-trip inverse of toScene). */
  static fromScene(scene: SceneJson, sizeMax = 25): ArtboardState {
    const state = new ArtboardState(scene.canvas.h, scene.canvas.w, sizeMax);
    for (const o of scene.objects) {
      const placed = state.place(o.category, o.cx, o.cy, o.size);
      // bypass clamping for verbatim restore: the server is the validator
      placed.cx = o.cx;
      placed.cy = o.cy;
      placed.size = o.size;
    }
    state.selectedId = null;
    return state;
  }

  private clampSize(size: number): number {
    return Math.min(this.sizeMax, Math.max(1, Math.round(size)));
  }
}

function clamp01(v: number): number {
  return Math.min(1, Math.max(0, v));
}
