import { ApiError, ReviewApiClient } from "./api.js";
import { UnsentQueue } from "./pending.js";
import type { QueueItem, QueueResponse, ReportResponse } from "./types.js";

interface Banner {
  kind: "error" | "info" | "conflict";
  text: string;
}

/** One-case-at-a-time review flow over the service queue.
 *
 * The physician sees the ROI image full-size and one large button per task
 * class; a submission either reaches the service, surfaces a conflict, or is
 * visibly retained as unsent. In blind mode nothing AI-derived is rendered.
 */
export class ReviewApp {
  private queue: QueueResponse | null = null;
  private report: ReportResponse | null = null;
  private banner: Banner | null = null;
  private readonly unsent = new UnsentQueue();
  private readonly locallyLabeled = new Set<string>();
  private busy = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ReviewApiClient,
    public reviewer: string = "physician",
  ) {}

  async start(): Promise<void> {
    await this.refresh();
  }

  async refresh(): Promise<void> {
    try {
      const [queue, report] = await Promise.all([
        this.api.getQueue(),
        this.api.getReport(),
      ]);
      this.queue = queue;
      this.report = report;
    } catch {
      this.banner = {
        kind: "error",
        text: "Review service unreachable. Check the connection and retry.",
      };
    }
    this.render();
  }

  currentItem(): QueueItem | null {
    if (!this.queue) return null;
    for (const item of this.queue.items) {
      if (!this.locallyLabeled.has(item.item_id)) return item;
    }
    return null;
  }

  async label(classCode: string): Promise<void> {
    const item = this.currentItem();
    if (!item || this.busy) return;
    this.busy = true;
    const request = {
      label: classCode,
      reviewer: this.reviewer,
      revision: item.revision,
    };
    try {
      const decision = await this.api.submitLabel(item.item_id, request);
      this.banner = {
        kind: "info",
        text: `Recorded ${decision.final_class} for case ${item.item_id}.`,
      };
      await this.refresh();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.banner = {
          kind: "conflict",
          text:
            `Conflict: case ${item.item_id} was updated by another reviewer. ` +
            "The queue has been refreshed; please review the case again.",
        };
        await this.refresh();
      } else if (error instanceof ApiError) {
        this.banner = { kind: "error", text: error.message };
        await this.refresh();
      } else {
        // network failure: keep the entry, never drop it silently
        this.unsent.add(item.item_id, request);
        this.locallyLabeled.add(item.item_id);
        this.banner = {
          kind: "info",
          text: "Offline: label kept as unsent. Retry when reconnected.",
        };
        this.render();
      }
    } finally {
      this.busy = false;
    }
  }

  async retryUnsent(): Promise<void> {
    const { delivered, rejected } = await this.unsent.flush(this.api);
    for (const decision of delivered) this.locallyLabeled.delete(decision.item_id);
    for (const { entry } of rejected) this.locallyLabeled.delete(entry.itemId);
    if (delivered.length || rejected.length) {
      const parts = [];
      if (delivered.length) parts.push(`${delivered.length} label(s) delivered`);
      if (rejected.length) {
        parts.push(`${rejected.length} rejected: ${rejected[0]?.message ?? ""}`);
      }
      this.banner = { kind: rejected.length ? "conflict" : "info",
                      text: parts.join("; ") };
      await this.refresh();
    } else if (this.unsent.count) {
      this.banner = { kind: "error", text: "Still offline; labels kept unsent." };
      this.render();
    }
  }

  // -- rendering -------------------------------------------------------

  render(): void {
    this.root.textContent = "";
    this.root.appendChild(this.renderHeader());
    if (this.banner) this.root.appendChild(this.renderBanner(this.banner));
    const main = el("main", "review-main");
    main.appendChild(this.renderCase());
    main.appendChild(this.renderReport());
    this.root.appendChild(main);
    if (this.unsent.count > 0) this.root.appendChild(this.renderUnsent());
  }

  private renderHeader(): HTMLElement {
    const header = el("header", "review-header");
    header.appendChild(el("h1", "", "Tongue lesion review"));
    if (this.queue) {
      const badge = el(
        "span",
        this.queue.blind ? "blind-badge" : "unblinded-badge",
        this.queue.blind ? "Blind review" : "Unblinded (demo)",
      );
      header.appendChild(badge);
      const remaining = this.queue.items.filter(
        (i) => !this.locallyLabeled.has(i.item_id),
      ).length;
      header.appendChild(el("span", "progress", `${remaining} case(s) pending`));
    }
    const reviewerBox = el("label", "reviewer-box", "Reviewer: ");
    const input = document.createElement("input");
    input.className = "reviewer-name";
    input.value = this.reviewer;
    input.addEventListener("change", () => {
      this.reviewer = input.value || "physician";
    });
    reviewerBox.appendChild(input);
    header.appendChild(reviewerBox);
    return header;
  }

  private renderBanner(banner: Banner): HTMLElement {
    return el("div", `banner banner-${banner.kind}`, banner.text);
  }

  private renderCase(): HTMLElement {
    const section = el("section", "case-panel");
    const item = this.currentItem();
    if (!this.queue || !item) {
      section.appendChild(
        el("p", "all-done", "All pending cases are reviewed."),
      );
      return section;
    }
    section.appendChild(el("h2", "case-id", `Case ${item.item_id}`));
    section.appendChild(
      el("p", "flag-reason", `Flagged for: ${item.flag_reason.replace("_", " ")}`),
    );
    const img = document.createElement("img");
    img.className = "case-image";
    img.alt = `case ${item.item_id}`;
    img.src = this.api.imageUrl(item.image_url);
    section.appendChild(img);

    if (!this.queue.blind && item.ai_prediction !== undefined) {
      section.appendChild(
        el("p", "demo-model-hint",
           `Model suggestion (demo mode): ${item.ai_prediction}`),
      );
    }

    const buttons = el("div", "class-buttons");
    for (const option of this.queue.classes) {
      const button = document.createElement("button");
      button.className = "class-button";
      button.textContent = option.display_name;
      button.title = option.clinical_features;
      button.dataset.code = option.code;
      button.addEventListener("click", () => {
        void this.label(option.code);
      });
      buttons.appendChild(button);
    }
    section.appendChild(buttons);
    return section;
  }

  private renderReport(): HTMLElement {
    const aside = el("aside", "report-panel");
    aside.appendChild(el("h2", "", "Accuracy"));
    if (!this.report || this.report.status === "empty") {
      aside.appendChild(el("p", "report-empty", "No evaluation loaded yet."));
      return aside;
    }
    aside.appendChild(
      this.accuracyRow("base", "Model alone", this.report.base_accuracy),
    );
    aside.appendChild(
      this.accuracyRow("ensemble", "Model + physician",
                       this.report.ensemble_accuracy),
    );
    aside.appendChild(
      el("p", "report-pending",
         `${this.report.pending ?? 0} of ${this.report.flagged ?? 0} flagged ` +
         "case(s) still pending"),
    );
    return aside;
  }

  private accuracyRow(
    key: string, title: string, value: number | null | undefined,
  ): HTMLElement {
    const row = el("div", `accuracy-row accuracy-${key}`);
    row.appendChild(el("span", "accuracy-label", title));
    const track = el("div", "bar-track");
    const bar = el("div", "bar-fill");
    const percent = value == null ? 0 : value * 100;
    bar.style.width = `${percent}%`;
    track.appendChild(bar);
    row.appendChild(track);
    row.appendChild(
      el("span", "accuracy-value",
         value == null ? "n/a" : `${formatPercent(value)}%`),
    );
    return row;
  }

  private renderUnsent(): HTMLElement {
    const section = el("section", "unsent-panel");
    section.appendChild(
      el("span", "unsent-badge", `${this.unsent.count} unsent label(s)`),
    );
    const retry = document.createElement("button");
    retry.className = "retry-unsent";
    retry.textContent = "Retry";
    retry.addEventListener("click", () => {
      void this.retryUnsent();
    });
    section.appendChild(retry);
    return section;
  }
}

function el(tag: string, className = "", text = ""): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function formatPercent(value: number): string {
  const percent = value * 100;
  return Number.isInteger(percent) ? String(percent) : percent.toFixed(1);
}
