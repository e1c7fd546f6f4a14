import { spawn } from "node:child_process";
import { promises as fs } from "node:fs";
import path from "node:path";

import type { ExecutionFeedback, Metrics, SandboxRequest } from "./schema.js";
import { metricsSchema } from "./schema.js";

export const DEFAULT_TAIL_BYTES = 64 * 1024;

// Only these variables cross into the sandbox; everything else in the host
// environment stays invisible to candidate code.
export const DEFAULT_ENV_ALLOWLIST = [
  "PATH",
  "HOME",
  "LANG",
  "LC_ALL",
  "TMPDIR",
] as const;

const INTERPRETERS: Record<string, string> = {
  ".py": "python3",
  ".js": "node",
  ".sh": "bash",
};

/** The request itself is unusable: nothing was spawned, no feedback exists. */
export class RequestError extends Error {}

/** The runner's own machinery failed (e.g. interpreter missing on PATH). */
export class RunnerUnavailableError extends Error {}

export interface RunnerOptions {
  tailBytes?: number;
  envAllowlist?: readonly string[];
}

/** Keeps only the trailing `cap` bytes of everything pushed into it. */
class TailBuffer {
  private buf = Buffer.alloc(0);

  constructor(private readonly cap: number) {}

  push(chunk: Buffer): void {
    this.buf = Buffer.concat([this.buf, chunk]);
    if (this.buf.length > this.cap) {
      this.buf = Buffer.from(this.buf.subarray(this.buf.length - this.cap));
    }
  }

  text(): string {
    return this.buf.toString("utf8");
  }
}

function composeLogs(stdout: string, stderr: string): string {
  const parts: string[] = [];
  if (stdout) parts.push(`[stdout]\n${stdout}`);
  if (stderr) parts.push(`[stderr]\n${stderr}`);
  return parts.join("\n");
}

function killProcessGroup(pid: number | undefined): void {
  if (pid === undefined) return;
  try {
    process.kill(-pid, "SIGKILL");
  } catch {
    try {
      process.kill(pid, "SIGKILL");
    } catch {
      // Already gone.
    }
  }
}

async function assertRunnable(req: SandboxRequest): Promise<string> {
  const workdir = path.resolve(req.workdir);
  let stat;
  try {
    stat = await fs.stat(workdir);
  } catch {
    throw new RequestError(`workdir does not exist: ${req.workdir}`);
  }
  if (!stat.isDirectory()) {
    throw new RequestError(`workdir is not a directory: ${req.workdir}`);
  }
  const entry = path.resolve(workdir, req.entrypoint);
  if (entry !== workdir && !entry.startsWith(workdir + path.sep)) {
    throw new RequestError(`entrypoint escapes the workdir: ${req.entrypoint}`);
  }
  try {
    const entryStat = await fs.stat(entry);
    if (!entryStat.isFile()) {
      throw new RequestError(`entrypoint is not a file: ${req.entrypoint}`);
    }
  } catch (err) {
    if (err instanceof RequestError) throw err;
    throw new RequestError(`entrypoint does not exist: ${req.entrypoint}`);
  }
  return workdir;
}

interface MetricsProbe {
  metrics: Metrics | null;
  problem: string;
}

async function readMetricsDocument(file: string): Promise<MetricsProbe> {
  let raw: string;
  try {
    raw = await fs.readFile(file, "utf8");
  } catch {
    return { metrics: null, problem: `metrics document missing at ${file}` };
  }
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch (err) {
    const reason = err instanceof Error ? err.message : String(err);
    return { metrics: null, problem: `metrics document is not valid JSON: ${reason}` };
  }
  const checked = metricsSchema.safeParse(parsed);
  if (!checked.success) {
    const first = checked.error.issues[0];
    const where = first && first.path.length ? ` at ${first.path.join(".")}` : "";
    const reason = first ? first.message : "malformed";
    return { metrics: null, problem: `metrics document malformed${where}: ${reason}` };
  }
  return { metrics: checked.data, problem: "" };
}

/**
 * Run the declared entrypoint as an isolated child process and translate the
 * outcome into the shared execution-feedback shape. Candidate failures
 * (crash, timeout, unusable metrics) are encoded in the document; only an
 * unusable request or broken runner machinery throws.
 */
export async function runSandbox(
  req: SandboxRequest,
  opts: RunnerOptions = {},
): Promise<ExecutionFeedback> {
  const tailBytes = opts.tailBytes ?? DEFAULT_TAIL_BYTES;
  const allowlist = opts.envAllowlist ?? DEFAULT_ENV_ALLOWLIST;
  const workdir = await assertRunnable(req);

  const ext = path.extname(req.entrypoint).toLowerCase();
  const interpreter = INTERPRETERS[ext];
  if (interpreter === undefined) {
    return {
      status: "non_executable",
      logs: "",
      error_message: `unsupported entrypoint extension ${ext || "(none)"}: expected one of ${Object.keys(INTERPRETERS).join(", ")}`,
      metrics: null,
      wall_time: 0,
    };
  }

  const env: Record<string, string> = {};
  for (const key of allowlist) {
    const value = process.env[key];
    if (value !== undefined) env[key] = value;
  }

  const started = Date.now();
  // detached puts the child in its own process group, so a timeout kill
  // reaches every descendant it spawned, not just the direct child.
  const child = spawn(interpreter, [req.entrypoint, ...req.args], {
    cwd: workdir,
    env,
    detached: true,
    stdio: ["ignore", "pipe", "pipe"],
  });

  const stdoutTail = new TailBuffer(tailBytes);
  const stderrTail = new TailBuffer(tailBytes);
  child.stdout?.on("data", (chunk: Buffer) => stdoutTail.push(chunk));
  child.stderr?.on("data", (chunk: Buffer) => stderrTail.push(chunk));

  let timedOut = false;
  const timer = setTimeout(() => {
    timedOut = true;
    killProcessGroup(child.pid);
  }, req.timeout * 1000);

  const outcome = await new Promise<{
    code: number | null;
    signal: NodeJS.Signals | null;
    spawnFailure: Error | null;
  }>((resolve) => {
    child.once("error", (err) => resolve({ code: null, signal: null, spawnFailure: err }));
    child.once("close", (code, signal) => resolve({ code, signal, spawnFailure: null }));
  });
  clearTimeout(timer);

  if (outcome.spawnFailure) {
    throw new RunnerUnavailableError(
      `could not spawn ${interpreter}: ${outcome.spawnFailure.message}`,
    );
  }

  const wallTime = (Date.now() - started) / 1000;
  const logs = composeLogs(stdoutTail.text(), stderrTail.text());

  if (timedOut) {
    return {
      status: "timeout",
      logs,
      error_message: `timed out after ${req.timeout}s; process group killed`,
      metrics: null,
      wall_time: wallTime,
    };
  }

  const probe = await readMetricsDocument(path.resolve(workdir, req.metrics_path));

  if (outcome.code === 0) {
    if (probe.metrics !== null) {
      return {
        status: "ok",
        logs,
        error_message: null,
        metrics: probe.metrics,
        wall_time: wallTime,
      };
    }
    return {
      status: "non_executable",
      logs,
      error_message: probe.problem,
      metrics: null,
      wall_time: wallTime,
    };
  }

  const cause =
    outcome.code !== null
      ? `exit code ${outcome.code}`
      : `terminated by ${outcome.signal ?? "unknown signal"}`;
  const stderrText = stderrTail.text().trim();
  return {
    status: "runtime_error",
    logs,
    error_message: stderrText ? `${cause}: ${stderrText}` : cause,
    // A run that crashed after writing usable metrics is still scoreable.
    metrics: probe.metrics,
    wall_time: wallTime,
  };
}
