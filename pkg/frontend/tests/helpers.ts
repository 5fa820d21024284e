/** Test utilities: PNG byte handling and a live service fixture. */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { PNG } from "pngjs";

export type RGB = [number, number, number];

/** Encode an image from a per-pixel color function; values in [0, 1]. */
export function encodePng(width: number, height: number, at: (x: number, y: number) => RGB): Uint8Array {
  const png = new PNG({ width, height });
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [r, g, b] = at(x, y);
      const i = (y * width + x) * 4;
      png.data[i] = Math.round(r * 255);
      png.data[i + 1] = Math.round(g * 255);
      png.data[i + 2] = Math.round(b * 255);
      png.data[i + 3] = 255;
    }
  }
  return new Uint8Array(PNG.sync.write(png));
}

export function decodePng(bytes: Uint8Array): { width: number; height: number; rgba: Uint8Array } {
  const png = PNG.sync.read(Buffer.from(bytes));
  return { width: png.width, height: png.height, rgba: new Uint8Array(png.data) };
}

export function toB64(bytes: Uint8Array): string {
  return Buffer.from(bytes).toString("base64");
}

export interface LiveService {
  baseUrl: string;
  stop: () => Promise<void>;
}

/** Spawn the restoration service and wait until /health answers. */
export async function startService(): Promise<LiveService> {
  const port = 17000 + Math.floor(Math.random() * 4000);
  const stateDir = mkdtempSync(join(tmpdir(), "idip-ui-e2e-"));
  const child: ChildProcess = spawn(
    "python3",
    ["-m", "idip.cli", "serve", "--host", "127.0.0.1", "--port", String(port), "--state-dir", stateDir, "--workers", "1"],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let log = "";
  child.stdout?.on("data", (d) => (log += d));
  child.stderr?.on("data", (d) => (log += d));

  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 30_000;
  for (;;) {
    if (child.exitCode !== null) throw new Error(`service exited early:\n${log}`);
    try {
      const res = await fetch(`${baseUrl}/api/v1/health`);
      if (res.ok) break;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      child.kill("SIGKILL");
      throw new Error(`service did not come up:\n${log}`);
    }
    await new Promise((r) => setTimeout(r, 150));
  }

  return {
    baseUrl,
    stop: () =>
      new Promise<void>((resolve) => {
        child.once("exit", () => resolve());
        child.kill("SIGTERM");
        setTimeout(() => child.kill("SIGKILL"), 5000).unref();
      }),
  };
}
