/**
 * Thin fetch client for the factorlens service.
 *
 * Every method returns the parsed JSON payload unchanged. Non-2xx
 * responses become ApiError (or StaleVersionError for 409, so callers
 * can offer a reload instead of a generic failure message).
 */

import type {
  AmesResponse,
  CardResponse,
  CommitResponse,
  EditLogResponse,
  EditRequestBody,
  ModelList,
  PredictRequestBody,
  PredictResponse,
  PreviewResponse,
  RevertResponse,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = 'ApiError';
  }
}

/** The server rejected a write because our version token is out of date. */
export class StaleVersionError extends ApiError {
  constructor(detail: string) {
    super(409, detail);
    this.name = 'StaleVersionError';
  }
}

async function toError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body.detail === 'string') {
      detail = body.detail;
    } else if (body.detail !== undefined) {
      detail = JSON.stringify(body.detail);
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return response.status === 409
    ? new StaleVersionError(detail)
    : new ApiError(response.status, detail);
}

export class WorkbenchClient {
  constructor(
    private readonly baseUrl: string = '/api/v1',
    private readonly fetchImpl: typeof fetch = globalThis.fetch.bind(globalThis),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      throw await toError(response);
    }
    return response.json() as Promise<T>;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  listModels(): Promise<ModelList> {
    return this.request<ModelList>('/models');
  }

  getCard(ref: string): Promise<CardResponse> {
    return this.request<CardResponse>(`/models/${ref}`);
  }

  getAmes(ref: string): Promise<AmesResponse> {
    return this.request<AmesResponse>(`/models/${ref}/ames`);
  }

  getEdits(ref: string): Promise<EditLogResponse> {
    return this.request<EditLogResponse>(`/models/${ref}/edits`);
  }

  predict(ref: string, body: PredictRequestBody): Promise<PredictResponse> {
    return this.post<PredictResponse>(`/models/${ref}/predict`, body);
  }

  previewEdit(ref: string, body: EditRequestBody): Promise<PreviewResponse> {
    return this.post<PreviewResponse>(`/models/${ref}/edits/preview`, body);
  }

  commitEdit(ref: string, version: string): Promise<CommitResponse> {
    return this.post<CommitResponse>(`/models/${ref}/edits/commit`, { version });
  }

  revertEdit(ref: string, editId: string, version: string): Promise<RevertResponse> {
    return this.post<RevertResponse>(`/models/${ref}/edits/revert`, {
      edit_id: editId,
      version,
    });
  }
}
