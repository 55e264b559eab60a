import { ClientPrediction } from './api.js';
import { announceAssertive, announcePolite } from './announce.js';

export const RESULTS_ID = 'results';
export const ERROR_BANNER_ID = 'error-banner';

function percent(p: number): string {
  return `${(p * 100).toFixed(1)}%`;
}

/** Render ranked rows with probability bars, in the order given. */
export function renderPredictions(container: HTMLElement, predictions: ClientPrediction[]) {
  clearErrorBanner();
  container.textContent = '';
  const list = document.createElement('ol');
  list.className = 'prediction-list';
  list.setAttribute('aria-label', 'Ranked food identifications');
  for (const p of predictions) {
    const item = document.createElement('li');
    item.className = 'prediction-row';
    const name = document.createElement('span');
    name.className = 'prediction-label';
    name.textContent = p.label;
    const bar = document.createElement('div');
    bar.className = 'prediction-bar';
    bar.setAttribute('role', 'img');
    bar.setAttribute('aria-label', `${p.label}: ${percent(p.probability)}`);
    const fill = document.createElement('div');
    fill.className = 'prediction-bar-fill';
    fill.style.width = percent(p.probability);
    bar.appendChild(fill);
    const value = document.createElement('span');
    value.className = 'prediction-value';
    value.textContent = percent(p.probability);
    item.append(name, bar, value);
    list.appendChild(item);
  }
  container.appendChild(list);
  if (predictions.length > 0) {
    const top = predictions[0];
    announcePolite(`Most likely: ${top.label}, ${percent(top.probability)}`);
  }
}

export function clearPredictions(container: HTMLElement) {
  container.textContent = '';
}

export function showErrorBanner(message: string) {
  const banner = document.getElementById(ERROR_BANNER_ID);
  if (!banner) return;
  banner.textContent = message;
  banner.hidden = false;
  // stale predictions must not outlive the error
  const results = document.getElementById(RESULTS_ID);
  if (results) clearPredictions(results);
  announceAssertive(message);
}

export function clearErrorBanner() {
  const banner = document.getElementById(ERROR_BANNER_ID);
  if (!banner) return;
  banner.textContent = '';
  banner.hidden = true;
}
