/**
 * Client-side view-model: the latest service payloads plus UI selections.
 *
 * Payload fields are stored exactly as received — the state never holds
 * numbers the service did not send. `version` is the optimistic-lock
 * token from the last committed read; it accompanies every write so the
 * server can reject stale edits.
 */

import type {
  EditRecord,
  FactorAme,
  ModelCard,
  ModelRow,
  PredictResponse,
  PreviewResponse,
} from './types.js';

/** One what-if bit: observed 0, observed 1, or uncertain. */
export type BitChoice = 0 | 1 | 'u';

export interface WhatIfState {
  bits: BitChoice[];
  t: number;
  result: PredictResponse | null;
}

export interface ComposerState {
  kind: 'exclude' | 'ratio';
  factor: number;
  anchor: number;
  target: number;
  rho: number;
  preview: PreviewResponse | null;
}

export interface Notice {
  kind: 'error' | 'stale' | 'info';
  text: string;
}

export interface WorkbenchState {
  models: ModelRow[];
  selected: string | null;
  version: string | null;
  card: ModelCard | null;
  ames: FactorAme[];
  edits: EditRecord[];
  whatIf: WhatIfState;
  composer: ComposerState;
  notice: Notice | null;
  busy: boolean;
}

export function initialState(): WorkbenchState {
  return {
    models: [],
    selected: null,
    version: null,
    card: null,
    ames: [],
    edits: [],
    whatIf: { bits: [], t: 40, result: null },
    composer: { kind: 'exclude', factor: 0, anchor: 0, target: 1, rho: 2.0, preview: null },
    notice: null,
    busy: false,
  };
}

/** Reset per-model UI selections when a model is opened or replaced. */
export function resetSelections(state: WorkbenchState, n: number): void {
  state.whatIf = { bits: Array(n).fill(1) as BitChoice[], t: state.whatIf.t, result: null };
  state.composer = {
    kind: state.composer.kind,
    factor: 0,
    anchor: 0,
    target: Math.min(1, n - 1),
    rho: state.composer.rho,
    preview: null,
  };
}
