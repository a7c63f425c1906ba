/** Typed client for the survey service REST API. */

import type { JobRecord, ModelInfo, Payload, ReviewDecision } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    return body.detail ?? response.statusText;
  } catch {
    return response.statusText;
  }
}

export class SurveyApi {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}/api/v1${path}`;
  }

  private async checked(response: Response): Promise<Response> {
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return response;
  }

  async submitJob(
    image: Blob,
    filename: string,
    options: { model?: string; threshold?: number } = {}
  ): Promise<{ job_id: string; status: string }> {
    const form = new FormData();
    form.append("image", image, filename);
    const params = new URLSearchParams();
    if (options.model !== undefined) {
      params.set("model", options.model);
    }
    if (options.threshold !== undefined) {
      params.set("threshold", String(options.threshold));
    }
    const query = params.size > 0 ? `?${params}` : "";
    const response = await this.checked(
      await fetch(this.url(`/jobs${query}`), { method: "POST", body: form })
    );
    return (await response.json()) as { job_id: string; status: string };
  }

  async getJob(jobId: string): Promise<JobRecord> {
    const response = await this.checked(await fetch(this.url(`/jobs/${jobId}`)));
    return (await response.json()) as JobRecord;
  }

  async review(jobId: string, decisions: ReviewDecision[]): Promise<Payload> {
    const response = await this.checked(
      await fetch(this.url(`/jobs/${jobId}/review`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ decisions }),
      })
    );
    return (await response.json()) as Payload;
  }

  async listModels(): Promise<ModelInfo[]> {
    const response = await this.checked(await fetch(this.url("/models")));
    return (await response.json()) as ModelInfo[];
  }

  cleanedUrl(jobId: string): string {
    return this.url(`/jobs/${jobId}/cleaned`);
  }

  cropsUrl(jobId: string): string {
    return this.url(`/jobs/${jobId}/crops`);
  }

  async downloadCleaned(jobId: string): Promise<ArrayBuffer> {
    const response = await this.checked(await fetch(this.cleanedUrl(jobId)));
    return response.arrayBuffer();
  }

  async downloadCrops(jobId: string): Promise<ArrayBuffer> {
    const response = await this.checked(await fetch(this.cropsUrl(jobId)));
    return response.arrayBuffer();
  }
}
