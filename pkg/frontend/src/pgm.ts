import * as fs from 'node:fs';

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major float values in [0, 1]. */
  data: Float32Array;
}

/** Read a binary 8-bit PGM (P5) into unit-range floats. */
export function readPgm(path: string): GrayImage {
  const raw = fs.readFileSync(path);
  if (raw[0] !== 0x50 || raw[1] !== 0x35) {
    throw new Error(`${path}: not a binary PGM (P5)`);
  }
  const fields: number[] = [];
  let pos = 2;
  while (fields.length < 3) {
    while (pos < raw.length && isSpace(raw[pos])) pos++;
    if (raw[pos] === 0x23) {
      while (raw[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < raw.length && !isSpace(raw[pos])) pos++;
    fields.push(parseInt(raw.subarray(start, pos).toString('ascii'), 10));
  }
  const [width, height, maxval] = fields;
  if (maxval !== 255) {
    throw new Error(`${path}: only maxval 255 is supported, got ${maxval}`);
  }
  pos++; // single whitespace after header
  const data = new Float32Array(width * height);
  for (let i = 0; i < width * height; i++) {
    data[i] = raw[pos + i] / 255;
  }
  return { width, height, data };
}

/** Write unit-range floats as a binary 8-bit PGM. */
export function writePgm(path: string, img: GrayImage): void {
  const header = Buffer.from(`P5\n${img.width} ${img.height}\n255\n`, 'ascii');
  const body = Buffer.alloc(img.width * img.height);
  for (let i = 0; i < img.data.length; i++) {
    const v = Math.min(1, Math.max(0, img.data[i]));
    body[i] = Math.round(v * 255);
  }
  fs.writeFileSync(path, Buffer.concat([header, body]));
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}
