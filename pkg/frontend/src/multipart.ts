// Minimal multipart/form-data response parser.
//
// Inference responses carry a JSON "params" part and a binary "label" part;
// payloads are arbitrary bytes (gzip streams contain CRLF-looking sequences),
// so parts are located by scanning for the boundary, never by text splitting.

export interface Part {
  name: string;
  filename?: string;
  contentType?: string;
  data: Uint8Array;
}

const CRLF = [0x0d, 0x0a];

function indexOfSeq(hay: Uint8Array, needle: number[], from: number): number {
  outer: for (let i = from; i + needle.length <= hay.length; i++) {
    for (let j = 0; j < needle.length; j++) {
      if (hay[i + j] !== needle[j]) continue outer;
    }
    return i;
  }
  return -1;
}

export function boundaryFromContentType(contentType: string): string {
  const m = /boundary=(?:"([^"]+)"|([^;]+))/i.exec(contentType);
  if (!m) throw new Error(`no boundary in content-type ${JSON.stringify(contentType)}`);
  return (m[1] ?? m[2]).trim();
}

export function parseMultipart(body: Uint8Array, boundary: string): Part[] {
  const enc = new TextEncoder();
  const dec = new TextDecoder();
  const delim = Array.from(enc.encode(`--${boundary}`));
  const parts: Part[] = [];

  let pos = indexOfSeq(body, delim, 0);
  if (pos < 0) throw new Error("multipart body has no boundary");
  while (true) {
    pos += delim.length;
    // "--" after the delimiter closes the stream
    if (body[pos] === 0x2d && body[pos + 1] === 0x2d) break;
    if (body[pos] === CRLF[0] && body[pos + 1] === CRLF[1]) pos += 2;

    const headerEnd = indexOfSeq(body, [...CRLF, ...CRLF], pos);
    if (headerEnd < 0) throw new Error("multipart part missing header terminator");
    const headerText = dec.decode(body.subarray(pos, headerEnd));
    const dataStart = headerEnd + 4;

    const next = indexOfSeq(body, [...CRLF, ...delim], dataStart);
    if (next < 0) throw new Error("multipart part missing closing boundary");
    const data = body.subarray(dataStart, next);

    let name = "";
    let filename: string | undefined;
    let contentType: string | undefined;
    for (const line of headerText.split("\r\n")) {
      const sep = line.indexOf(":");
      if (sep < 0) continue;
      const key = line.slice(0, sep).trim().toLowerCase();
      const val = line.slice(sep + 1).trim();
      if (key === "content-disposition") {
        const nm = /name="([^"]*)"/.exec(val);
        if (nm) name = nm[1];
        const fn = /filename="([^"]*)"/.exec(val);
        if (fn) filename = fn[1];
      } else if (key === "content-type") {
        contentType = val;
      }
    }
    parts.push({ name, filename, contentType, data });
    pos = next + 2; // step over CRLF onto the next delimiter
  }
  return parts;
}

export function partByName(parts: Part[], name: string): Part {
  const p = parts.find((x) => x.name === name);
  if (!p) {
    const have = parts.map((x) => x.name).join(", ");
    throw new Error(`multipart response has no part ${JSON.stringify(name)} (have: ${have})`);
  }
  return p;
}
