import { promises as fs, readFileSync } from "node:fs";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, describe, expect, it } from "vitest";

import { main } from "../src/cli.js";
import { RequestError, runSandbox } from "../src/runner.js";
import {
  executionFeedbackSchema,
  sandboxRequestSchema,
  type ExecutionFeedback,
  type SandboxRequest,
} from "../src/schema.js";

const FIXTURES = path.join(path.dirname(fileURLToPath(import.meta.url)), "fixtures");
const SUITE_START = Date.now();

const scratchDirs: string[] = [];

afterAll(async () => {
  await Promise.all(
    scratchDirs.map((dir) => fs.rm(dir, { recursive: true, force: true })),
  );
  // The whole suite, including the forced timeout, must stay fast.
  expect(Date.now() - SUITE_START).toBeLessThan(20_000);
});

async function makeWorkdir(...fixtureNames: string[]): Promise<string> {
  const dir = await fs.mkdtemp(path.join(os.tmpdir(), "sandbox-runner-"));
  scratchDirs.push(dir);
  for (const name of fixtureNames) {
    await fs.copyFile(path.join(FIXTURES, name), path.join(dir, name));
  }
  return dir;
}

function request(
  workdir: string,
  entrypoint: string,
  overrides: Partial<SandboxRequest> = {},
): SandboxRequest {
  return {
    workdir,
    entrypoint,
    args: [],
    timeout: 10,
    metrics_path: "metrics.json",
    ...overrides,
  };
}

function expectValid(feedback: ExecutionFeedback): void {
  expect(executionFeedbackSchema.parse(feedback)).toEqual(feedback);
}

function processState(pid: number): string | null {
  try {
    const stat = readFileSync(`/proc/${pid}/stat`, "utf8");
    const closeParen = stat.lastIndexOf(")");
    return stat.slice(closeParen + 2, closeParen + 3);
  } catch {
    return null;
  }
}

async function waitUntilDead(pid: number, deadlineMs: number): Promise<boolean> {
  const deadline = Date.now() + deadlineMs;
  for (;;) {
    const state = processState(pid);
    // Gone entirely, or a zombie awaiting reaping — either way it no longer runs.
    if (state === null || state === "Z") return true;
    if (Date.now() > deadline) return false;
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
}

describe("happy path", () => {
  it("reports ok with the metrics the candidate wrote", async () => {
    const dir = await makeWorkdir("write_metrics.py");
    const feedback = await runSandbox(request(dir, "write_metrics.py"));
    expectValid(feedback);
    expect(feedback.status).toBe("ok");
    expect(feedback.metrics).toEqual({ ndcg: 0.45 });
    expect(feedback.error_message).toBeNull();
    expect(feedback.logs).toContain("training finished");
    expect(feedback.wall_time).toBeGreaterThanOrEqual(0);
  });

  it("passes args through and honors a custom metrics path", async () => {
    const dir = await makeWorkdir("write_metrics.py");
    const feedback = await runSandbox(
      request(dir, "write_metrics.py", {
        args: ["scores.json"],
        metrics_path: "scores.json",
      }),
    );
    expectValid(feedback);
    expect(feedback.status).toBe("ok");
    expect(feedback.metrics).toEqual({ ndcg: 0.45 });
  });

  it("maps .js entrypoints to node", async () => {
    const dir = await makeWorkdir("write_metrics.js");
    const feedback = await runSandbox(request(dir, "write_metrics.js"));
    expectValid(feedback);
    expect(feedback.status).toBe("ok");
    expect(feedback.metrics).toEqual({ f1: 0.25 });
  });

  it("maps .sh entrypoints to bash", async () => {
    const dir = await makeWorkdir("write_metrics.sh");
    const feedback = await runSandbox(request(dir, "write_metrics.sh"));
    expectValid(feedback);
    expect(feedback.status).toBe("ok");
    expect(feedback.metrics).toEqual({ rmse: 1.5 });
  });
});

describe("candidate failures", () => {
  it("captures the exception text of a crashing candidate", async () => {
    const dir = await makeWorkdir("raise_error.py");
    const feedback = await runSandbox(request(dir, "raise_error.py"));
    expectValid(feedback);
    expect(feedback.status).toBe("runtime_error");
    expect(feedback.error_message).toContain("exit code 1");
    expect(feedback.error_message).toContain(
      "tensor shape mismatch: expected (32, 16)",
    );
    expect(feedback.metrics).toBeNull();
    expect(feedback.logs).toContain("starting up");
  });

  it("keeps metrics written before a crash so the run stays scoreable", async () => {
    const dir = await makeWorkdir();
    await fs.writeFile(
      path.join(dir, "crash_after_metrics.py"),
      'import json, pathlib, sys\n' +
        'pathlib.Path("metrics.json").write_text(json.dumps({"auc": 0.7}))\n' +
        "sys.exit(3)\n",
    );
    const feedback = await runSandbox(request(dir, "crash_after_metrics.py"));
    expectValid(feedback);
    expect(feedback.status).toBe("runtime_error");
    expect(feedback.error_message).toContain("exit code 3");
    expect(feedback.metrics).toEqual({ auc: 0.7 });
  });

  it("kills the whole process group on timeout and leaves no orphans", async () => {
    const dir = await makeWorkdir("sleep_spawner.py");
    const feedback = await runSandbox(request(dir, "sleep_spawner.py", { timeout: 1 }));
    expectValid(feedback);
    expect(feedback.status).toBe("timeout");
    expect(feedback.error_message).toContain("timed out after 1s");
    expect(feedback.metrics).toBeNull();
    expect(feedback.wall_time).toBeGreaterThanOrEqual(1);

    const pids = (await fs.readFile(path.join(dir, "pids.txt"), "utf8"))
      .trim()
      .split(/\s+/)
      .map(Number);
    expect(pids).toHaveLength(2);
    for (const pid of pids) {
      expect(await waitUntilDead(pid, 3_000)).toBe(true);
    }
  });

  it("flags a clean exit without a metrics document as non-executable", async () => {
    const dir = await makeWorkdir("no_metrics.py");
    const feedback = await runSandbox(request(dir, "no_metrics.py"));
    expectValid(feedback);
    expect(feedback.status).toBe("non_executable");
    expect(feedback.error_message).toContain("metrics document missing");
    expect(feedback.metrics).toBeNull();
  });

  it("flags a non-JSON metrics document", async () => {
    const dir = await makeWorkdir("bad_metrics.py");
    const feedback = await runSandbox(request(dir, "bad_metrics.py"));
    expectValid(feedback);
    expect(feedback.status).toBe("non_executable");
    expect(feedback.error_message).toContain("not valid JSON");
  });

  it("flags metrics the consuming engine would reject", async () => {
    const dir = await makeWorkdir();
    await fs.writeFile(
      path.join(dir, "negative.py"),
      'import json, pathlib\n' +
        'pathlib.Path("metrics.json").write_text(json.dumps({"score": -1}))\n',
    );
    await fs.writeFile(
      path.join(dir, "empty.py"),
      'import pathlib\npathlib.Path("metrics.json").write_text("{}")\n',
    );
    const negative = await runSandbox(request(dir, "negative.py"));
    expectValid(negative);
    expect(negative.status).toBe("non_executable");
    expect(negative.error_message).toContain("malformed");

    const empty = await runSandbox(request(dir, "empty.py"));
    expectValid(empty);
    expect(empty.status).toBe("non_executable");
    expect(empty.error_message).toContain("no entries");
  });

  it("flags an entrypoint with no known interpreter", async () => {
    const dir = await makeWorkdir();
    await fs.writeFile(path.join(dir, "main.txt"), "not runnable\n");
    const feedback = await runSandbox(request(dir, "main.txt"));
    expectValid(feedback);
    expect(feedback.status).toBe("non_executable");
    expect(feedback.error_message).toContain("unsupported entrypoint extension");
  });
});

describe("isolation", () => {
  it("bounds captured logs to the configured tail", async () => {
    const dir = await makeWorkdir("spam_logs.py");
    const feedback = await runSandbox(request(dir, "spam_logs.py"), {
      tailBytes: 2_048,
    });
    expectValid(feedback);
    expect(feedback.status).toBe("ok");
    expect(feedback.logs.length).toBeLessThanOrEqual(2 * 2_048 + 32);
    expect(feedback.logs).toContain("expected-tail-marker");
    expect(feedback.logs).not.toContain("step 000000");
  });

  it("only lets allowlisted environment variables through", async () => {
    process.env.SANDBOX_SECRET_PROBE = "leak-me";
    try {
      const dir = await makeWorkdir("env_probe.py");
      const feedback = await runSandbox(request(dir, "env_probe.py"));
      expectValid(feedback);
      expect(feedback.status).toBe("ok");
      expect(feedback.metrics).toEqual({ leaked: 0 });
    } finally {
      delete process.env.SANDBOX_SECRET_PROBE;
    }
  });

  it("refuses requests it cannot run instead of spawning", async () => {
    await expect(
      runSandbox(request("/nonexistent/workdir", "main.py")),
    ).rejects.toThrow(RequestError);

    const dir = await makeWorkdir();
    await expect(runSandbox(request(dir, "missing.py"))).rejects.toThrow(
      /entrypoint does not exist/,
    );
    await expect(runSandbox(request(dir, "../escape.py"))).rejects.toThrow(
      /escapes the workdir/,
    );
  });
});

describe("command-line contract", () => {
  it("exits 0 and writes schema-valid feedback for a normal run", async () => {
    const dir = await makeWorkdir("write_metrics.py");
    const requestPath = path.join(dir, "request.json");
    const feedbackPath = path.join(dir, "feedback.json");
    await fs.writeFile(
      requestPath,
      JSON.stringify(request(dir, "write_metrics.py")),
    );

    expect(await main([requestPath, feedbackPath])).toBe(0);

    const doc = JSON.parse(await fs.readFile(feedbackPath, "utf8"));
    const feedback = executionFeedbackSchema.parse(doc);
    expect(feedback.status).toBe("ok");
    expect(feedback.metrics).toEqual({ ndcg: 0.45 });
  });

  it("exits 0 even when the candidate fails, as long as feedback is written", async () => {
    const dir = await makeWorkdir("raise_error.py");
    const requestPath = path.join(dir, "request.json");
    const feedbackPath = path.join(dir, "feedback.json");
    await fs.writeFile(requestPath, JSON.stringify(request(dir, "raise_error.py")));

    expect(await main([requestPath, feedbackPath])).toBe(0);

    const feedback = executionFeedbackSchema.parse(
      JSON.parse(await fs.readFile(feedbackPath, "utf8")),
    );
    expect(feedback.status).toBe("runtime_error");
  });

  it("exits 2 without feedback on unusable requests", async () => {
    const dir = await makeWorkdir();
    const feedbackPath = path.join(dir, "feedback.json");

    expect(await main([])).toBe(2);
    expect(await main([path.join(dir, "absent.json"), feedbackPath])).toBe(2);

    const garbled = path.join(dir, "garbled.json");
    await fs.writeFile(garbled, "not json at all");
    expect(await main([garbled, feedbackPath])).toBe(2);

    const badShape = path.join(dir, "bad_shape.json");
    await fs.writeFile(
      badShape,
      JSON.stringify({ ...request(dir, "main.py"), timeout: -5 }),
    );
    expect(await main([badShape, feedbackPath])).toBe(2);

    const missingWorkdir = path.join(dir, "missing_workdir.json");
    await fs.writeFile(
      missingWorkdir,
      JSON.stringify(request("/nonexistent/workdir", "main.py")),
    );
    expect(await main([missingWorkdir, feedbackPath])).toBe(2);

    await expect(fs.stat(feedbackPath)).rejects.toThrow();
  });

  it("round-trips the request schema it consumes", () => {
    const doc = {
      workdir: "/tmp/w",
      entrypoint: "main.py",
      args: ["--fast"],
      timeout: 7200,
      metrics_path: "metrics.json",
    };
    expect(sandboxRequestSchema.parse(doc)).toEqual(doc);
    expect(() =>
      sandboxRequestSchema.parse({ ...doc, extra_field: 1 }),
    ).toThrow();
  });
});
