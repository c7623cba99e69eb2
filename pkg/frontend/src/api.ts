/** Typed wrappers around the inference service HTTP API. */

import type { LayoutResponse, SceneJson, SynthesizeResponse } from "./state.js";

export interface CategoryInfo {
  id: number;
  name: string;
  kind: "stuff" | "thing";
}

export interface CategoriesResponse {
  categories: CategoryInfo[];
  taxonomy_hash: string;
  size_max: number;
}

export interface ApiError {
  error: string;
  detail: string;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public body: ApiError,
  ) {
    super(`${body.error}: ${body.detail}`);
  }
}

async function post<T>(url: string, payload: unknown): Promise<T> {
  const resp = await fetch(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
  if (!resp.ok) {
    throw new ServiceError(resp.status, (await resp.json()) as ApiError);
  }
  return (await resp.json()) as T;
}

export function getCategories(base = ""): Promise<CategoriesResponse> {
  return fetch(`${base}/categories`).then((r) => r.json());
}

export function postLayout(
  scene: SceneJson,
  latentSeed: number,
  opts: { perturbRange?: number; perturbSeed?: number; base?: string } = {},
): Promise<LayoutResponse> {
  const base = opts.base ?? "";
  const query =
    opts.perturbRange !== undefined && opts.perturbRange > 0
      ? `?perturb_range=${opts.perturbRange}&perturb_seed=${opts.perturbSeed ?? 0}`
      : "";
  return post(`${base}/layout${query}`, { ...scene, latent_seed: latentSeed });
}

export function postSynthesize(
  scene: SceneJson,
  latentSeed: number,
  base = "",
): Promise<SynthesizeResponse> {
  return post(`${base}/synthesize`, { ...scene, latent_seed: latentSeed });
}
