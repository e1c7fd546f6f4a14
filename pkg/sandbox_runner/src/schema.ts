import { z } from "zod";

export const FEEDBACK_STATUSES = [
  "ok",
  "runtime_error",
  "timeout",
  "non_executable",
] as const;

export type FeedbackStatus = (typeof FEEDBACK_STATUSES)[number];

export const sandboxRequestSchema = z
  .object({
    workdir: z.string().min(1),
    entrypoint: z.string().min(1),
    args: z.array(z.string()).default([]),
    timeout: z.number().positive(),
    metrics_path: z.string().min(1),
  })
  .strict();

export type SandboxRequest = z.infer<typeof sandboxRequestSchema>;

// The consuming engine rejects empty, negative, or non-finite metric values
// on ok-status feedback, so a document carrying them counts as unusable here
// rather than being passed through to fail later.
export const metricsSchema = z
  .record(z.string().min(1), z.number().finite().nonnegative())
  .refine((doc) => Object.keys(doc).length > 0, {
    message: "metrics document has no entries",
  });

export type Metrics = z.infer<typeof metricsSchema>;

export const executionFeedbackSchema = z
  .object({
    status: z.enum(FEEDBACK_STATUSES),
    logs: z.string(),
    error_message: z.string().nullable(),
    metrics: metricsSchema.nullable(),
    wall_time: z.number().min(0).finite(),
  })
  .strict()
  .superRefine((doc, ctx) => {
    if (doc.status === "ok" && doc.metrics === null) {
      ctx.addIssue({
        code: z.ZodIssueCode.custom,
        message: "status ok requires a metrics payload",
      });
    }
    if (doc.status === "non_executable" && doc.metrics !== null) {
      ctx.addIssue({
        code: z.ZodIssueCode.custom,
        message: "non_executable feedback cannot carry metrics",
      });
    }
  });

export type ExecutionFeedback = z.infer<typeof executionFeedbackSchema>;
