/* tslint:disable */
/* eslint-disable */

/**
 * Airy transmission across three free spectral ranges near 1560 nm for a
 * symmetric resonator with face reflectivity `r`.
 */
export function airy(r: number, loss_db_per_cm: number, length_cm: number, points: number): string;

/**
 * Emission spectrum over a signal band at one crystal temperature.
 * `temperature_c` NaN selects the double resonance at the signal filter.
 */
export function cluster_spectrum(temperature_c: number, lo_nm: number, hi_nm: number, points: number): string;

/**
 * Monte-Carlo coincidence histogram at the default operating point with
 * the pair rate and acquisition time scaled, followed by the g² fit.
 */
export function g2_run(pair_rate_hz: number, duration_s: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly airy: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly cluster_spectrum: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly g2_run: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_exn_store: (a: number) => void;
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
