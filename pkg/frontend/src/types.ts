/** Wire contract of the review service JSON API. */

export interface ClassOption {
  code: string;
  display_name: string;
  clinical_features: string;
}

export interface QueueItem {
  item_id: string;
  image_url: string;
  flag_reason: string;
  status: string;
  revision: number;
  /** present only when the service runs unblinded (demo mode) */
  ai_scores?: number[];
  ai_prediction?: string;
}

export interface QueueResponse {
  task: string | null;
  blind: boolean;
  classes: ClassOption[];
  pending: number;
  items: QueueItem[];
}

export interface Decision {
  item_id: string;
  final_class: string;
  source: "ai" | "physician";
}

export interface ReportResponse {
  status: "ok" | "empty";
  task_kind?: string;
  base_accuracy?: number | null;
  ensemble_accuracy?: number | null;
  flagged?: number;
  pending?: number;
  labeled?: number;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

export interface LabelRequest {
  label: string;
  reviewer: string;
  revision: number;
}
