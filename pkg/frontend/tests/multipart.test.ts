import { describe, expect, it } from "vitest";
import { boundaryFromContentType, parseMultipart, partByName } from "../src/multipart.js";

function buildBody(boundary: string, parts: { headers: string[]; payload: Uint8Array }[]): Uint8Array {
  const enc = new TextEncoder();
  const chunks: Uint8Array[] = [];
  for (const p of parts) {
    chunks.push(enc.encode(`--${boundary}\r\n${p.headers.join("\r\n")}\r\n\r\n`));
    chunks.push(p.payload);
    chunks.push(enc.encode("\r\n"));
  }
  chunks.push(enc.encode(`--${boundary}--\r\n`));
  const total = chunks.reduce((n, c) => n + c.length, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const c of chunks) {
    out.set(c, off);
    off += c.length;
  }
  return out;
}

describe("boundary extraction", () => {
  it("bare and quoted boundaries", () => {
    expect(boundaryFromContentType("multipart/form-data; boundary=abc123")).toBe("abc123");
    expect(boundaryFromContentType('multipart/form-data; boundary="lf99aa"')).toBe("lf99aa");
  });

  it("missing boundary throws", () => {
    expect(() => boundaryFromContentType("application/json")).toThrow(/no boundary/);
  });
});

describe("parsing", () => {
  it("json + binary parts, names, filenames, content types", () => {
    const enc = new TextEncoder();
    // binary payload deliberately contains CRLFs and boundary-like bytes
    const blob = new Uint8Array([0x0d, 0x0a, 0x2d, 0x2d, 0x1f, 0x8b, 0, 255, 0x0d, 0x0a]);
    const body = buildBody("lfdeadbeef", [
      {
        headers: [
          'Content-Disposition: form-data; name="params"',
          "Content-Type: application/json",
        ],
        payload: enc.encode('{"latency_ms": 4.2}'),
      },
      {
        headers: [
          'Content-Disposition: form-data; name="label"; filename="label.nii.gz"',
          "Content-Type: application/octet-stream",
        ],
        payload: blob,
      },
    ]);
    const parts = parseMultipart(body, "lfdeadbeef");
    expect(parts.map((p) => p.name)).toEqual(["params", "label"]);

    const params = partByName(parts, "params");
    expect(params.contentType).toBe("application/json");
    expect(JSON.parse(new TextDecoder().decode(params.data)).latency_ms).toBe(4.2);

    const label = partByName(parts, "label");
    expect(label.filename).toBe("label.nii.gz");
    expect(Array.from(label.data)).toEqual(Array.from(blob));
  });

  it("unknown part name raises with the available names", () => {
    const body = buildBody("bb", [
      { headers: ['Content-Disposition: form-data; name="only"'], payload: new Uint8Array([1]) },
    ]);
    const parts = parseMultipart(body, "bb");
    expect(() => partByName(parts, "nope")).toThrow(/have: only/);
  });

  it("empty payload part", () => {
    const body = buildBody("bb", [
      { headers: ['Content-Disposition: form-data; name="empty"'], payload: new Uint8Array(0) },
    ]);
    expect(partByName(parseMultipart(body, "bb"), "empty").data.length).toBe(0);
  });

  it("garbage input throws", () => {
    expect(() => parseMultipart(new TextEncoder().encode("hello"), "bb")).toThrow(/no boundary/);
  });
});
