// @vitest-environment node
//
// End-to-end parity against a running service. Skipped unless configured:
//
//   foodrec serve --weights model.plf --port 8008
//   foodrec classify photo.png --weights model.plf --k 5 --json > expected.json
//   FOODREC_SERVICE_URL=http://127.0.0.1:8008 \
//   FOODREC_IMAGE=photo.png FOODREC_EXPECTED_JSON=expected.json npm test

import { readFileSync } from 'node:fs';
import { describe, expect, it } from 'vitest';
import { ApiClient } from './api.js';

const url = process.env.FOODREC_SERVICE_URL;
const imagePath = process.env.FOODREC_IMAGE;
const expectedPath = process.env.FOODREC_EXPECTED_JSON;
const configured = Boolean(url && imagePath && expectedPath);

describe.skipIf(!configured)('service parity', () => {
  it('browser client labels match the CLI for the same image', async () => {
    const expected = JSON.parse(readFileSync(expectedPath!, 'utf8'));
    const image = new Blob([readFileSync(imagePath!)]);
    const result = await new ApiClient(url!).classify(image, expected.predictions.length);
    expect(result.predictions.map((p) => p.label)).toEqual(
      expected.predictions.map((p: { label: string }) => p.label),
    );
    expect(result.predictions.map((p) => p.probability)).toEqual(
      expected.predictions.map((p: { probability: number }) => p.probability),
    );
    expect(result.modelVersion).toBe(expected.model_version);
  });
});
