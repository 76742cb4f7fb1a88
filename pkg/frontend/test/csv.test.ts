import { describe, expect, it } from "vitest";

import { MissingColumnError, num, parseCsv, requireColumns } from "../src/csv.js";

describe("csv", () => {
  it("parses header and rows", () => {
    const t = parseCsv("a,b\n1,2\n3,4\n");
    expect(t.columns).toEqual(["a", "b"]);
    expect(t.rows).toHaveLength(2);
    expect(t.rows[1]?.b).toBe("4");
  });

  it("treats an empty file as zero rows", () => {
    const t = parseCsv("");
    expect(t.columns).toEqual([]);
    expect(t.rows).toEqual([]);
  });

  it("names the missing column", () => {
    const t = parseCsv("a,b\n1,2\n");
    expect(() => requireColumns(t, ["bytes_intra"], "cost csv")).toThrowError(
      MissingColumnError,
    );
    try {
      requireColumns(t, ["bytes_intra"], "cost csv");
    } catch (e) {
      expect((e as Error).message).toContain("bytes_intra");
    }
  });

  it("rejects non-numeric cells", () => {
    const t = parseCsv("a\nxyz\n");
    expect(() => num(t.rows[0]!, "a")).toThrow(/non-numeric/);
  });
});
