#!/usr/bin/env node
import { promises as fs } from "node:fs";
import { pathToFileURL } from "node:url";

import { RequestError, runSandbox } from "./runner.js";
import { executionFeedbackSchema, sandboxRequestSchema } from "./schema.js";
import type { SandboxRequest } from "./schema.js";

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

/**
 * argv: [requestPath, feedbackPath]. Exit 0 exactly when a feedback document
 * was written — candidate failures still produce feedback and exit 0; only a
 * bad request (2) or broken runner (1) exit without one.
 */
export async function main(argv: string[]): Promise<number> {
  const [requestPath, feedbackPath] = argv;
  if (!requestPath || !feedbackPath || argv.length !== 2) {
    console.error("usage: sandbox-runner <request.json> <feedback.json>");
    return 2;
  }

  let request: SandboxRequest;
  try {
    const raw = await fs.readFile(requestPath, "utf8");
    request = sandboxRequestSchema.parse(JSON.parse(raw));
  } catch (err) {
    console.error(`invalid request: ${describe(err)}`);
    return 2;
  }

  try {
    const feedback = executionFeedbackSchema.parse(await runSandbox(request));
    await fs.writeFile(feedbackPath, JSON.stringify(feedback, null, 2) + "\n", "utf8");
    return 0;
  } catch (err) {
    if (err instanceof RequestError) {
      console.error(`request refused: ${err.message}`);
      return 2;
    }
    console.error(`runner failure: ${describe(err)}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === pathToFileURL(process.argv[1]).href;

if (invokedDirectly) {
  main(process.argv.slice(2)).then(
    (code) => {
      process.exitCode = code;
    },
    (err) => {
      console.error(`runner failure: ${describe(err)}`);
      process.exitCode = 1;
    },
  );
}
