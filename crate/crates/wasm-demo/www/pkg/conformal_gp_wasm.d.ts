/* tslint:disable */
/* eslint-disable */

/**
 * JSON in, JSON out; errors come back as `{"error": "..."}`.
 */
export function conformal_demo(params_json: string): string;

/**
 * Unit-variance Matérn correlation of order ν = p + 1/2 at `points` distances
 * evenly spaced on [0, r_max], for length scale `theta`.
 */
export function matern_curve(order: number, theta: number, r_max: number, points: number): Float64Array;

/**
 * Beta soft coverage threshold; NaN for invalid arguments.
 */
export function soft_threshold(n: number, alpha: number, upsilon: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly conformal_demo: (a: number, b: number) => [number, number];
    readonly matern_curve: (a: number, b: number, c: number, d: number) => [number, number];
    readonly soft_threshold: (a: number, b: number, c: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
