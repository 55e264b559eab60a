// Thin client for the classification service. Predictions are passed through
// exactly as the service returns them: no re-sorting, no renormalizing.

export interface ClientPrediction {
  label: string;
  probability: number;
  rank: number;
}

export interface ClassifyResult {
  predictions: ClientPrediction[];
  latencyMs: number;
  modelVersion: string;
}

export class ServiceError extends Error {
  constructor(message: string, public readonly status: number | null = null) {
    super(message);
    this.name = 'ServiceError';
  }
}

export function resolveBaseUrl(): string {
  const w = globalThis as { FOODREC_API_URL?: string };
  return (w.FOODREC_API_URL ?? 'http://127.0.0.1:8008').replace(/\/+$/, '');
}

async function errorMessage(res: Response): Promise<string> {
  try {
    const body = await res.json();
    if (body && typeof body.error === 'string') return body.error;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `service responded with HTTP ${res.status}`;
}

export class ApiClient {
  constructor(private readonly baseUrl: string = resolveBaseUrl()) {}

  async health(): Promise<{ modelVersion: string; numClasses: number }> {
    let res: Response;
    try {
      res = await fetch(`${this.baseUrl}/health`);
    } catch {
      throw new ServiceError('cannot reach the classification service');
    }
    if (!res.ok) throw new ServiceError(await errorMessage(res), res.status);
    const body = await res.json();
    return { modelVersion: body.model_version, numClasses: body.num_classes };
  }

  async classify(image: Blob, k = 5): Promise<ClassifyResult> {
    const form = new FormData();
    form.append('image', image, 'capture.jpg');
    form.append('k', String(k));
    let res: Response;
    try {
      res = await fetch(`${this.baseUrl}/classify`, { method: 'POST', body: form });
    } catch {
      throw new ServiceError('cannot reach the classification service');
    }
    if (!res.ok) throw new ServiceError(await errorMessage(res), res.status);
    const body = await res.json();
    const raw: { label: string; probability: number }[] = body.predictions;
    return {
      // rank is positional in the service's own order
      predictions: raw.map((p, i) => ({ label: p.label, probability: p.probability, rank: i + 1 })),
      latencyMs: body.latency_ms,
      modelVersion: body.model_version,
    };
  }
}
