// Class colors mirror the service's deterministic palette (first SHA-1
// byte of the class name modulo 12) so overlay strokes and the legend
// agree with anything the backend renders.

const PALETTE: Array<[number, number, number]> = [
  [230, 25, 75],
  [60, 180, 75],
  [255, 225, 25],
  [0, 130, 200],
  [245, 130, 48],
  [145, 30, 180],
  [70, 240, 240],
  [240, 50, 230],
  [210, 245, 60],
  [250, 190, 190],
  [0, 128, 128],
  [170, 110, 40],
];

// Compact synchronous SHA-1; only the first digest byte is consumed.
function sha1FirstByte(text: string): number {
  const bytes = new TextEncoder().encode(text);
  const ml = bytes.length;
  const withPadding = new Uint8Array((((ml + 8) >> 6) + 1) << 6);
  withPadding.set(bytes);
  withPadding[ml] = 0x80;
  const bitLen = ml * 8;
  for (let i = 0; i < 8; i++) {
    withPadding[withPadding.length - 1 - i] = (bitLen / 2 ** (8 * i)) & 0xff;
  }
  let h0 = 0x67452301 | 0;
  let h1 = 0xefcdab89 | 0;
  let h2 = 0x98badcfe | 0;
  let h3 = 0x10325476 | 0;
  let h4 = 0xc3d2e1f0 | 0;
  const w = new Int32Array(80);
  const rotl = (v: number, n: number) => (v << n) | (v >>> (32 - n));
  for (let block = 0; block < withPadding.length; block += 64) {
    for (let i = 0; i < 16; i++) {
      w[i] =
        (withPadding[block + 4 * i] << 24) |
        (withPadding[block + 4 * i + 1] << 16) |
        (withPadding[block + 4 * i + 2] << 8) |
        withPadding[block + 4 * i + 3];
    }
    for (let i = 16; i < 80; i++) {
      w[i] = rotl(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    }
    let [a, b, c, d, e] = [h0, h1, h2, h3, h4];
    for (let i = 0; i < 80; i++) {
      let f: number;
      let k: number;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5a827999;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ed9eba1;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8f1bbcdc;
      } else {
        f = b ^ c ^ d;
        k = 0xca62c1d6;
      }
      const tmp = (rotl(a, 5) + f + e + k + w[i]) | 0;
      e = d;
      d = c;
      c = rotl(b, 30);
      b = a;
      a = tmp;
    }
    h0 = (h0 + a) | 0;
    h1 = (h1 + b) | 0;
    h2 = (h2 + c) | 0;
    h3 = (h3 + d) | 0;
    h4 = (h4 + e) | 0;
  }
  return (h0 >>> 24) & 0xff;
}

export function classColor(name: string): [number, number, number] {
  return PALETTE[sha1FirstByte(name) % PALETTE.length];
}

export function classColorCss(name: string): string {
  const [r, g, b] = classColor(name);
  return `rgb(${r}, ${g}, ${b})`;
}
