/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const __wbg_preview_free: (a: number, b: number) => void;
export const demo_arms: (a: number) => [number, number, number, number];
export const demo_cameras: (a: number) => [number, number];
export const demo_layouts: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_preview: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const demo_solve_ik: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const preview_frames: (a: number) => number;
export const preview_height: (a: number) => number;
export const preview_rgba: (a: number) => [number, number];
export const preview_width: (a: number) => number;
export const task_names: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
