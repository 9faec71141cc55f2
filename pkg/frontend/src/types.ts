/**
 * Response shapes of the factorlens service, mirrored field-for-field.
 *
 * The workbench never recomputes model math: every number it displays is
 * taken from one of these payloads. If the service adds a field, add it
 * here and render it — nothing in the client derives probabilities,
 * AMEs, or coefficients on its own.
 */

/** One row in the model browser (GET /api/v1/models). */
export interface ModelRow {
  hash: string;
  n: number;
  scenario: string;
  edits: number;
}

export interface ModelList {
  models: ModelRow[];
}

/** Per-factor coefficient and its average marginal effect. */
export interface FactorAme {
  id: number;
  name: string;
  beta: number;
  ame: number;
}

export interface InteractionEntry {
  pair: [number, number];
  value: number;
}

/** The model card (GET /api/v1/models/{ref} -> card). */
export interface ModelCard {
  version: string;
  n: number;
  scenario: string;
  outcomes: { positive: string; negative: string };
  alpha: number;
  factors: FactorAme[];
  gamma: InteractionEntry[];
  map: Record<string, number>;
  diagnostics: {
    converged?: boolean;
    iterations?: number;
    marginal_log_likelihood?: number;
    ablation?: string;
    [key: string]: unknown;
  };
  edits: number;
}

export interface CardResponse {
  model: string;
  version: string;
  card: ModelCard;
}

export interface AmesResponse {
  model: string;
  version: string;
  ames: FactorAme[];
}

/** Serialized coefficient state inside an edit record. */
export interface ParamsDict {
  alpha: number;
  beta: number[];
  gamma: Record<string, number>;
}

/** One applied edit, as stored in the model's history. */
export interface EditRecord {
  edit_id: string;
  kind: string;
  pre_params: ParamsDict;
  post_params: ParamsDict;
  constraint_residuals: Record<string, number>;
  side_effect: number;
  timestamp: string;
  author: string;
  details: Record<string, unknown>;
}

export interface EditLogResponse {
  model: string;
  version: string;
  edits: EditRecord[];
}

/** How a what-if condition split the factors. */
export interface Partition {
  n: number;
  observed: Record<string, number>;
  uncertain: number[];
  condition_text: string;
}

export interface PredictResponse {
  model: string;
  version: string;
  probability: number;
  /** null when the condition was fully observed (exact, no sampling). */
  standard_error: number | null;
  samples_used: number;
  partition: Partition;
}

export interface PreviewResponse {
  model: string;
  version: string;
  preview_version: string;
  edit: EditRecord;
  ames_before: FactorAme[];
  ames_after: FactorAme[];
}

export interface CommitResponse {
  model: string;
  version: string;
  edit_id: string;
  edits: number;
}

export interface RevertResponse {
  model: string;
  version: string;
  edit_id: string;
  reverted: string;
  edits: number;
}

/** Body of POST .../edits/preview. */
export interface EditRequestBody {
  kind: 'exclude' | 'ratio';
  version: string;
  factor?: number;
  anchor?: number;
  target?: number;
  rho?: number;
  author?: string;
}

/** Body of POST .../predict — exactly one of config / partial. */
export interface PredictRequestBody {
  config?: number[];
  partial?: Record<number, number>;
  t?: number;
}
