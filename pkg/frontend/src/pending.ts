import type { ReviewApiClient } from "./api.js";
import type { Decision, LabelRequest } from "./types.js";

export interface UnsentLabel {
  itemId: string;
  request: LabelRequest;
}

/** Labels that failed to reach the service (network down) are retained here
 * until a retry succeeds or the service rejects them; the physician's entry
 * is never dropped silently. */
export class UnsentQueue {
  private entries: UnsentLabel[] = [];

  add(itemId: string, request: LabelRequest): void {
    this.entries.push({ itemId, request });
  }

  get count(): number {
    return this.entries.length;
  }

  list(): readonly UnsentLabel[] {
    return this.entries;
  }

  /** Retry everything; entries the service acknowledges (or definitively
   * rejects, e.g. a conflict after reconnecting) leave the queue, entries
   * that still cannot reach the service stay. Returns decisions and
   * rejections for the caller to surface. */
  async flush(api: ReviewApiClient): Promise<{
    delivered: Decision[];
    rejected: { entry: UnsentLabel; message: string }[];
  }> {
    const delivered: Decision[] = [];
    const rejected: { entry: UnsentLabel; message: string }[] = [];
    const remaining: UnsentLabel[] = [];
    for (const entry of this.entries) {
      try {
        delivered.push(await api.submitLabel(entry.itemId, entry.request));
      } catch (error) {
        if (error instanceof Error && error.name === "ApiError") {
          rejected.push({ entry, message: error.message });
        } else {
          remaining.push(entry); // still offline
        }
      }
    }
    this.entries = remaining;
    return { delivered, rejected };
  }
}
