// Typed client for the engine's HTTP API. The UI talks to the service only
// through these calls; no memo or trace values are computed client-side.

export interface MemoRecordView {
  topic: string;
  summary?: string;
  start: number;
  end: number;
}

export interface RetrievalOptionView {
  ordinal: number;
  topic: string;
  summary: string | null;
  is_noto: boolean;
}

export interface EvidenceLineView {
  index: number;
  speaker: string;
  text: string;
}

export interface EvidenceItemView {
  topic: string;
  summary: string | null;
  dialog_lines: EvidenceLineView[];
}

export interface TraceView {
  memo_written: boolean;
  retrieval_options: RetrievalOptionView[];
  selected: number[];
  evidence: EvidenceItemView[];
  prompts: Record<string, string>;
  raw_outputs: Record<string, string>;
}

export interface MessageResponse {
  reply: string;
  trace: TraceView;
}

export class ServiceError extends Error {
  constructor(
    public readonly stage: string | null,
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

export class SessionGoneError extends Error {
  constructor(sessionId: string) {
    super(`session ${sessionId} no longer exists`);
    this.name = "SessionGoneError";
  }
}

function isObject(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null;
}

async function errorFromResponse(response: Response): Promise<ServiceError> {
  let stage: string | null = null;
  let message = `service returned ${response.status}`;
  try {
    const body: unknown = await response.json();
    if (isObject(body) && isObject(body.detail)) {
      if (typeof body.detail.stage === "string") {
        stage = body.detail.stage;
      }
      if (typeof body.detail.error === "string") {
        message = body.detail.error;
      }
    } else if (isObject(body) && typeof body.detail === "string") {
      message = body.detail;
    }
  } catch {
    // non-JSON error body: keep the status message
  }
  return new ServiceError(stage, response.status, message);
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async createSession(): Promise<string> {
    const response = await fetch(this.url("/sessions"), { method: "POST" });
    if (!response.ok) {
      throw await errorFromResponse(response);
    }
    const body: unknown = await response.json();
    if (!isObject(body) || typeof body.id !== "string") {
      throw new ServiceError(null, response.status, "malformed create-session response");
    }
    return body.id;
  }

  async sendMessage(sessionId: string, text: string): Promise<MessageResponse> {
    const response = await fetch(this.url(`/sessions/${sessionId}/messages`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
    if (response.status === 404) {
      throw new SessionGoneError(sessionId);
    }
    if (!response.ok) {
      throw await errorFromResponse(response);
    }
    const body: unknown = await response.json();
    if (!isObject(body) || typeof body.reply !== "string" || !isObject(body.trace)) {
      throw new ServiceError(null, response.status, "malformed message response");
    }
    return body as unknown as MessageResponse;
  }

  async fetchMemo(sessionId: string): Promise<MemoRecordView[]> {
    const response = await fetch(this.url(`/sessions/${sessionId}/memo`));
    if (response.status === 404) {
      throw new SessionGoneError(sessionId);
    }
    if (!response.ok) {
      throw await errorFromResponse(response);
    }
    const body: unknown = await response.json();
    if (!Array.isArray(body)) {
      throw new ServiceError(null, response.status, "malformed memo response");
    }
    return body as MemoRecordView[];
  }

  async fetchTrace(sessionId: string): Promise<TraceView | null> {
    const response = await fetch(this.url(`/sessions/${sessionId}/trace`));
    if (response.status === 404) {
      throw new SessionGoneError(sessionId);
    }
    if (!response.ok) {
      throw await errorFromResponse(response);
    }
    return (await response.json()) as TraceView | null;
  }
}
