// Minimal OBJ reader for the mesh artifact: v lines (3 or 6 floats, the
// extra triple being a vertex color) and f lines, fan-triangulated.

export interface ParsedMesh {
  vertices: number[][]; // [x, y, z]
  triangles: number[][]; // vertex index triples
  colors: number[][] | null; // [r, g, b] in [0, 1], per vertex
}

export function parseObj(text: string): ParsedMesh {
  const vertices: number[][] = [];
  const colors: number[][] = [];
  const triangles: number[][] = [];
  let sawColor = false;
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = (lines[i] ?? "").trim();
    if (line.length === 0 || line.startsWith("#")) continue;
    const parts = line.split(/\s+/);
    if (parts[0] === "v") {
      const nums = parts.slice(1).map(Number);
      if ((nums.length !== 3 && nums.length !== 6) || nums.some(Number.isNaN)) {
        throw new Error(`line ${i + 1}: bad vertex`);
      }
      vertices.push(nums.slice(0, 3));
      if (nums.length === 6) {
        sawColor = true;
        colors.push(nums.slice(3, 6));
      } else {
        colors.push([0.8, 0.8, 0.8]);
      }
    } else if (parts[0] === "f") {
      const idx = parts.slice(1).map((tok) => {
        const head = tok.split("/")[0] ?? "";
        const v = Number(head);
        if (!Number.isInteger(v) || v <= 0) throw new Error(`line ${i + 1}: bad face index`);
        return v - 1;
      });
      if (idx.length < 3) throw new Error(`line ${i + 1}: face needs 3 vertices`);
      for (let k = 1; k < idx.length - 1; k++) {
        triangles.push([idx[0]!, idx[k]!, idx[k + 1]!]);
      }
    }
    // vn / vt / o / g / usemtl etc. are irrelevant to the overlay
  }
  for (const tri of triangles) {
    for (const v of tri) {
      if (v >= vertices.length) throw new Error("face index out of range");
    }
  }
  return { vertices, triangles, colors: sawColor ? colors : null };
}

/** Unique undirected edges, for wireframe rendering. */
export function meshEdges(triangles: number[][]): Array<[number, number]> {
  const seen = new Set<string>();
  const edges: Array<[number, number]> = [];
  for (const [a, b, c] of triangles as Array<[number, number, number]>) {
    for (const [u, v] of [
      [a, b],
      [b, c],
      [c, a],
    ] as Array<[number, number]>) {
      const key = u < v ? `${u}-${v}` : `${v}-${u}`;
      if (!seen.has(key)) {
        seen.add(key);
        edges.push(u < v ? [u, v] : [v, u]);
      }
    }
  }
  return edges;
}
