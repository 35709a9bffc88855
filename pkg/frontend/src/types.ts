export type StageName =
  | "Created"
  | "DepthPreprocessed"
  | "ImageGenerated"
  | "BackgroundRemoved"
  | "MeshReconstructed"
  | "TargetBuilt"
  | "Anchored"
  | "Failed"
  | "Cancelled";

export const PIPELINE_STAGES: StageName[] = [
  "Created",
  "DepthPreprocessed",
  "ImageGenerated",
  "BackgroundRemoved",
  "MeshReconstructed",
  "TargetBuilt",
  "Anchored",
];

export interface ArtifactEntry {
  hash: string;
  provenance?: string;
}

export interface SessionError {
  stage: string;
  reason: string;
  detail?: unknown;
}

export interface SessionJson {
  id: string;
  prompt: string;
  created_at: string;
  seed: number;
  control_mode: string;
  checkpoint_id: string;
  stage: StageName;
  artifacts: Record<string, Record<string, string>>;
  kinds: Record<string, ArtifactEntry>;
  error: SessionError | null;
  ratings: number[];
  cancel_requested: boolean;
}

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number]; // w, x, y, z

export interface PoseJson {
  pos: Vec3;
  quat: Quat;
}

export type PhaseName = "Initializing" | "Tracking" | "Lost";

export interface TrackingSnapshot {
  session: string;
  t: number;
  phase: PhaseName;
  pose: PoseJson | null;
  err_t_m: number | null;
  err_r_deg: number | null;
}

export interface Keyframe {
  t: number;
  pos: Vec3;
  quat: Quat;
  occlusion: number;
}

export interface LikertSummary {
  group: string;
  n: number;
  mean: number;
  stddev: number;
}

export interface TargetRef {
  reference_image: string;
  mesh: string;
  physical_extent: Vec3;
  alignment_offset: PoseJson;
}
