/** Upload-and-poll flow: submit a file, poll until the job settles. */

import type { SurveyApi } from "./api.js";
import type { JobRecord, JobStatus } from "./types.js";

export class JobFailedError extends Error {
  constructor(
    public readonly jobId: string,
    message: string
  ) {
    super(message);
    this.name = "JobFailedError";
  }
}

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  onProgress?: (status: JobStatus) => void;
}

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export async function pollUntilDone(
  api: SurveyApi,
  jobId: string,
  { intervalMs = 1000, timeoutMs = 120_000, onProgress }: PollOptions = {}
): Promise<JobRecord> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const record = await api.getJob(jobId);
    onProgress?.(record.status);
    if (record.status === "done") {
      return record;
    }
    if (record.status === "failed") {
      throw new JobFailedError(jobId, record.error ?? "job failed");
    }
    if (Date.now() >= deadline) {
      throw new Error(`job ${jobId} still ${record.status} after ${timeoutMs}ms`);
    }
    await sleep(intervalMs);
  }
}

export async function uploadAndPoll(
  api: SurveyApi,
  file: Blob,
  filename: string,
  options: { model?: string; threshold?: number } & PollOptions = {}
): Promise<JobRecord> {
  const { model, threshold, ...poll } = options;
  const { job_id } = await api.submitJob(file, filename, { model, threshold });
  return pollUntilDone(api, job_id, poll);
}
