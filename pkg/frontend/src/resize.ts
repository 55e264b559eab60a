// Client-side downscale so phone photos don't trip the service upload limit.

export const MAX_DIMENSION = 1024;
export const JPEG_QUALITY = 0.9;

export function targetDimensions(
  width: number,
  height: number,
  maxDim = MAX_DIMENSION,
): { width: number; height: number; resize: boolean } {
  const longest = Math.max(width, height);
  if (longest <= maxDim) return { width, height, resize: false };
  const scale = maxDim / longest;
  return {
    width: Math.max(1, Math.round(width * scale)),
    height: Math.max(1, Math.round(height * scale)),
    resize: true,
  };
}

export async function downscaleImage(blob: Blob, maxDim = MAX_DIMENSION): Promise<Blob> {
  const bitmap = await createImageBitmap(blob);
  try {
    const dims = targetDimensions(bitmap.width, bitmap.height, maxDim);
    if (!dims.resize) return blob;
    const canvas = document.createElement('canvas');
    canvas.width = dims.width;
    canvas.height = dims.height;
    const ctx = canvas.getContext('2d');
    if (!ctx) return blob;
    ctx.drawImage(bitmap, 0, 0, dims.width, dims.height);
    return await new Promise<Blob>((resolve) =>
      canvas.toBlob((b) => resolve(b ?? blob), 'image/jpeg', JPEG_QUALITY),
    );
  } finally {
    bitmap.close();
  }
}
