import { describe, expect, it } from 'vitest';
import { targetDimensions } from './resize.js';

describe('targetDimensions', () => {
  it('leaves small images alone', () => {
    expect(targetDimensions(640, 480, 1024)).toEqual({ width: 640, height: 480, resize: false });
    expect(targetDimensions(1024, 1024, 1024).resize).toBe(false);
  });

  it('scales the longest edge down to the limit, preserving aspect', () => {
    expect(targetDimensions(4032, 3024, 1024)).toEqual({ width: 1024, height: 768, resize: true });
    expect(targetDimensions(3024, 4032, 1024)).toEqual({ width: 768, height: 1024, resize: true });
  });

  it('never collapses a dimension to zero', () => {
    const d = targetDimensions(10000, 1, 1024);
    expect(d.height).toBe(1);
    expect(d.width).toBe(1024);
  });
});
