/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Arms in scene order with their home gripper positions, as JSON:
     * `[{name, home: [x, y, z]}]`.
     */
    arms(): string;
    /**
     * Camera names of the task, as a JSON array.
     */
    cameras(): string;
    /**
     * Object positions of `count` sampled scenes, as JSON:
     * `{table: {min, max}, episodes: [{episode, objects: [{name, asset, x, y, z, yaw_deg}]}]}`.
     */
    layouts(seed: number, count: number): string;
    constructor(task: string);
    /**
     * Plans episode `episode` and renders camera `camera` at fraction `t`
     * (0 to 1) of the trajectory.
     */
    preview(seed: number, episode: number, camera: number, t: number): Preview;
    /**
     * Solves for a world-frame gripper position with the gripper pointing
     * down, starting from the arm's home pose. Returns JSON with the joint
     * values and residuals, or the failure reason.
     */
    solve_ik(arm: number, x: number, y: number, z: number, position_only: boolean): string;
}

/**
 * RGBA pixels of one rendered frame.
 */
export class Preview {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    rgba(): Uint8Array;
    /**
     * Frames in the planned episode.
     */
    readonly frames: number;
    readonly height: number;
    readonly width: number;
}

/**
 * Names of the bundled tasks.
 */
export function task_names(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly __wbg_preview_free: (a: number, b: number) => void;
    readonly demo_arms: (a: number) => [number, number, number, number];
    readonly demo_cameras: (a: number) => [number, number];
    readonly demo_layouts: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_preview: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly demo_solve_ik: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly preview_frames: (a: number) => number;
    readonly preview_height: (a: number) => number;
    readonly preview_rgba: (a: number) => [number, number];
    readonly preview_width: (a: number) => number;
    readonly task_names: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
