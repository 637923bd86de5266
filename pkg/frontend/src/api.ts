import type {
  ApiErrorBody,
  Decision,
  LabelRequest,
  QueueResponse,
  ReportResponse,
} from "./types.js";

/** Service returned an error body; status distinguishes conflicts (409),
 * invalid labels (422), and unknown items (404). */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let body: ApiErrorBody = { code: "unknown", message: response.statusText };
  try {
    body = (await response.json()) as ApiErrorBody;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, body.code, body.message);
}

export class ReviewApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly token?: string,
  ) {}

  private headers(json = false): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  async getQueue(): Promise<QueueResponse> {
    const response = await fetch(`${this.baseUrl}/api/queue`, {
      headers: this.headers(),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as QueueResponse;
  }

  async getReport(): Promise<ReportResponse> {
    const response = await fetch(`${this.baseUrl}/api/report`, {
      headers: this.headers(),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as ReportResponse;
  }

  async submitLabel(itemId: string, body: LabelRequest): Promise<Decision> {
    const response = await fetch(
      `${this.baseUrl}/api/items/${encodeURIComponent(itemId)}/label`,
      {
        method: "POST",
        headers: this.headers(true),
        body: JSON.stringify(body),
      },
    );
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as Decision;
  }

  imageUrl(itemImageUrl: string): string {
    return `${this.baseUrl}${itemImageUrl}`;
  }
}
