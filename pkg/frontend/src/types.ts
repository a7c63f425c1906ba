/** Wire types mirroring the survey service's JSON payloads. */

export type Role = "heat_loss_source" | "obstructive";

export type JobStatus = "queued" | "running" | "done" | "failed";

/** Uncompressed run-length encoded mask: column-major, alternating
 * background/foreground runs starting with background; size is [h, w]. */
export interface RLE {
  size: [number, number];
  counts: number[];
}

export interface PredictionDoc {
  index: number;
  category_id: number;
  category: string;
  role: Role;
  score: number;
  bbox: [number, number, number, number];
  mask: RLE | null;
  accepted: boolean;
}

export interface CropDoc {
  index: number;
  prediction_index: number;
  category: string;
  region: number[];
  requested_padding: number;
  file: string;
  summary: {
    category: string;
    region: number[];
    min: number;
    max: number;
    mean: number;
    std: number;
  };
}

export interface Payload {
  model_id: string;
  score_threshold: number;
  predictions: PredictionDoc[];
  crops: CropDoc[];
  cleaned: string;
  fill: { kind: string; k?: number };
}

export interface JobRecord {
  job_id: string;
  status: JobStatus;
  submitted_at: string;
  input_ref: string;
  model_id: string;
  score_threshold: number;
  result_ref: string | null;
  error: string | null;
  finished_at: string | null;
  payload?: Payload;
}

export interface ModelInfo {
  id: string;
  map_test: number;
  map_train: number;
  parent: string;
  backbone: string;
  data_volume: number;
  augmented: boolean;
  default: boolean;
}

export interface ReviewDecision {
  prediction_index: number;
  accepted: boolean;
}
