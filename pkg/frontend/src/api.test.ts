import { afterEach, describe, expect, it, vi } from 'vitest';
import { ApiClient, ServiceError, resolveBaseUrl } from './api.js';

const PAYLOAD = {
  predictions: [
    { label: 'hummus', probability: 0.61 },
    { label: 'falafel', probability: 0.2 },
    { label: 'labneh', probability: 0.19 },
  ],
  latency_ms: 12.5,
  model_version: 'abc123',
};

function okResponse(body: unknown): Response {
  return new Response(JSON.stringify(body), { status: 200 });
}

afterEach(() => {
  vi.unstubAllGlobals();
  delete (globalThis as { FOODREC_API_URL?: string }).FOODREC_API_URL;
});

describe('classify', () => {
  it('passes predictions through in service order with positional ranks', async () => {
    vi.stubGlobal('fetch', vi.fn(async () => okResponse(PAYLOAD)));
    const result = await new ApiClient('http://svc').classify(new Blob(['x']), 3);
    expect(result.predictions.map((p) => p.label)).toEqual(['hummus', 'falafel', 'labneh']);
    expect(result.predictions.map((p) => p.rank)).toEqual([1, 2, 3]);
    // probabilities untouched: no renormalizing even though they sum to 1 here
    expect(result.predictions.map((p) => p.probability)).toEqual([0.61, 0.2, 0.19]);
    expect(result.modelVersion).toBe('abc123');
  });

  it('sends a multipart form with image and k fields', async () => {
    const fetchMock = vi.fn(async () => okResponse(PAYLOAD));
    vi.stubGlobal('fetch', fetchMock);
    await new ApiClient('http://svc').classify(new Blob(['x']), 4);
    const [url, init] = fetchMock.mock.calls[0] as [string, RequestInit];
    expect(url).toBe('http://svc/classify');
    const form = init.body as FormData;
    expect(form.get('image')).toBeInstanceOf(Blob);
    expect(form.get('k')).toBe('4');
  });

  it('surfaces the service error message and status', async () => {
    vi.stubGlobal(
      'fetch',
      vi.fn(async () => new Response(JSON.stringify({ error: 'empty request body' }), { status: 400 })),
    );
    const err = await new ApiClient('http://svc')
      .classify(new Blob([]))
      .catch((e: ServiceError) => e);
    expect(err).toBeInstanceOf(ServiceError);
    expect(err.message).toBe('empty request body');
    expect(err.status).toBe(400);
  });

  it('maps network failure to a readable error', async () => {
    vi.stubGlobal('fetch', vi.fn(async () => Promise.reject(new TypeError('fetch failed'))));
    const err = await new ApiClient('http://down')
      .classify(new Blob(['x']))
      .catch((e: ServiceError) => e);
    expect(err.message).toMatch(/cannot reach/);
    expect(err.status).toBeNull();
  });
});

describe('health', () => {
  it('returns model metadata', async () => {
    vi.stubGlobal(
      'fetch',
      vi.fn(async () => okResponse({ status: 'ok', model_version: 'v1', num_classes: 23 })),
    );
    const health = await new ApiClient('http://svc').health();
    expect(health).toEqual({ modelVersion: 'v1', numClasses: 23 });
  });

  it('reports an unloaded service', async () => {
    vi.stubGlobal(
      'fetch',
      vi.fn(async () => new Response(JSON.stringify({ error: 'model not loaded' }), { status: 503 })),
    );
    const err = await new ApiClient('http://svc').health().catch((e: ServiceError) => e);
    expect(err.status).toBe(503);
    expect(err.message).toBe('model not loaded');
  });
});

describe('resolveBaseUrl', () => {
  it('defaults to localhost and strips trailing slashes from overrides', () => {
    expect(resolveBaseUrl()).toBe('http://127.0.0.1:8008');
    (globalThis as { FOODREC_API_URL?: string }).FOODREC_API_URL = 'https://kiosk.local/';
    expect(resolveBaseUrl()).toBe('https://kiosk.local');
  });
});
