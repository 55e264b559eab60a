import { readFileSync } from 'node:fs';
import { join } from 'node:path';
import axe from 'axe-core';
import { describe, expect, it } from 'vitest';
import { renderPredictions } from './ui.js';

const PAGE = readFileSync(join(process.cwd(), 'index.html'), 'utf8');

function loadPage() {
  document.documentElement.innerHTML = PAGE.replace(/<script[^>]*><\/script>/, '');
  // innerHTML replacement drops the <html lang="en"> attribute
  document.documentElement.lang = 'en';
  // the real app un-hides these once the camera starts
  document.getElementById('capture')!.hidden = false;
  document.getElementById('scan-again')!.hidden = false;
}

async function audit() {
  const result = await axe.run(document, {
    rules: {
      // jsdom has no layout engine, so contrast cannot be computed here
      'color-contrast': { enabled: false },
    },
  });
  return result.violations;
}

describe('accessibility audit', () => {
  it('the idle page has no violations', async () => {
    loadPage();
    expect(await audit()).toEqual([]);
  });

  it('the results view has no violations', async () => {
    loadPage();
    renderPredictions(document.getElementById('results')!, [
      { label: 'hummus', probability: 0.6, rank: 1 },
      { label: 'falafel', probability: 0.4, rank: 2 },
    ]);
    expect(await audit()).toEqual([]);
  });

  it('interactive controls are keyboard reachable', () => {
    loadPage();
    for (const id of ['capture', 'scan-again', 'file-input']) {
      const el = document.getElementById(id)!;
      expect(el.tabIndex).toBeGreaterThanOrEqual(0);
    }
  });
});
