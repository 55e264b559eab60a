import { ApiClient, ServiceError } from './api.js';
import { downscaleImage } from './resize.js';
import { announcePolite } from './announce.js';
import {
  RESULTS_ID,
  clearErrorBanner,
  clearPredictions,
  renderPredictions,
  showErrorBanner,
} from './ui.js';

const api = new ApiClient();
let busy = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function startCamera(video: HTMLVideoElement, captureButton: HTMLButtonElement) {
  if (!navigator.mediaDevices?.getUserMedia) return;
  try {
    const stream = await navigator.mediaDevices.getUserMedia({
      video: { facingMode: 'environment' },
    });
    video.srcObject = stream;
    await video.play();
    video.hidden = false;
    captureButton.hidden = false;
  } catch {
    // No camera or permission denied: the file input stays as the only path.
  }
}

function frameToBlob(video: HTMLVideoElement): Promise<Blob> {
  const canvas = document.createElement('canvas');
  canvas.width = video.videoWidth;
  canvas.height = video.videoHeight;
  const ctx = canvas.getContext('2d');
  if (!ctx) return Promise.reject(new Error('canvas unavailable'));
  ctx.drawImage(video, 0, 0);
  return new Promise((resolve, reject) =>
    canvas.toBlob((b) => (b ? resolve(b) : reject(new Error('capture failed'))), 'image/jpeg', 0.92),
  );
}

async function classifyBlob(blob: Blob, controls: HTMLButtonElement[]) {
  if (busy) return;
  busy = true;
  for (const c of controls) c.disabled = true;
  announcePolite('Identifying…');
  try {
    const small = await downscaleImage(blob);
    const result = await api.classify(small, 5);
    renderPredictions(el(RESULTS_ID), result.predictions);
    el<HTMLButtonElement>('scan-again').hidden = false;
  } catch (err) {
    const message = err instanceof ServiceError ? err.message : 'something went wrong';
    showErrorBanner(message);
  } finally {
    busy = false;
    for (const c of controls) c.disabled = false;
  }
}

function init() {
  const video = el<HTMLVideoElement>('camera');
  const captureButton = el<HTMLButtonElement>('capture');
  const fileInput = el<HTMLInputElement>('file-input');
  const scanAgain = el<HTMLButtonElement>('scan-again');
  const controls = [captureButton, scanAgain];

  api
    .health()
    .then(() => clearErrorBanner())
    .catch((err: ServiceError) => showErrorBanner(err.message));

  void startCamera(video, captureButton);

  captureButton.addEventListener('click', async () => {
    try {
      await classifyBlob(await frameToBlob(video), controls);
    } catch {
      showErrorBanner('could not capture a frame');
    }
  });

  fileInput.addEventListener('change', () => {
    const file = fileInput.files?.[0];
    if (file) void classifyBlob(file, controls);
  });

  scanAgain.addEventListener('click', () => {
    clearPredictions(el(RESULTS_ID));
    clearErrorBanner();
    scanAgain.hidden = true;
    fileInput.value = '';
    announcePolite('Ready for the next dish');
  });
}

if (typeof document !== 'undefined' && document.getElementById('camera')) {
  init();
}
