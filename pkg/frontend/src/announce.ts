// Screen-reader live regions. Clearing before writing makes repeated
// announcements of the same text reliable across screen readers.

export const STATUS_REGION_ID = 'sr-status';
export const ALERT_REGION_ID = 'sr-alert';

function announce(targetId: string, text: string) {
  const el = document.getElementById(targetId);
  if (!el) return;
  el.textContent = '';
  window.setTimeout(() => {
    el.textContent = text;
  }, 0);
}

export function announcePolite(text: string) {
  announce(STATUS_REGION_ID, text);
}

export function announceAssertive(text: string) {
  announce(ALERT_REGION_ID, text);
}
