// Typed client for the session service REST API.

export type Mode = "human" | "simulated";

export interface AskAction {
  kind: "ask";
  attribute: string;
  display: string;
}

export interface RecommendedItem {
  item: string;
  attributes: string[];
}

export interface RecommendAction {
  kind: "recommend";
  items: RecommendedItem[];
}

export type SystemAction = AskAction | RecommendAction;

export interface TerminationSummary {
  success: boolean;
  turn: number | null;
  rank: number | null;
  activation_turn: number | null;
  total_reward: number;
  hn?: number;
}

export interface TranscriptEntry {
  turn: number;
  action: { kind: string; attribute?: string; items?: string[] };
  feedback: { kind: string; value?: string | null; accepted_rank?: number | null };
  reward: number;
}

export interface SessionState {
  id: string;
  mode: Mode;
  user: string;
  previous_items: string[];
  turn: number;
  candidates: number;
  accepted_attributes: string[];
  rejected_attributes: string[];
  unknown_attributes: string[];
  rejected_items: string[];
  rewards: number[];
  done: boolean;
  success: boolean;
  awaiting: "system" | "user";
  transcript: TranscriptEntry[];
  summary?: TerminationSummary;
  pending_action?: SystemAction;
}

export interface FeedbackResult {
  turn: number;
  candidates: number;
  done: boolean;
  success: boolean;
  reward: number;
  summary?: TerminationSummary;
}

export type AttributeAnswer = "accept" | "reject" | "unknown";

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function requestJson<T>(fetchImpl: typeof fetch, url: string,
                              init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetchImpl(url, init);
  } catch (err) {
    throw new ApiError(0, `service unreachable: ${String(err)}`);
  }
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    throw new ApiError(resp.status, (body as { detail?: string }).detail ?? resp.statusText);
  }
  return body as T;
}

export class SessionApi {
  constructor(private base: string = "", private fetchImpl: typeof fetch = fetch) {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  private post<T>(path: string, payload?: unknown): Promise<T> {
    return requestJson<T>(this.fetchImpl, this.url(path), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: payload === undefined ? undefined : JSON.stringify(payload),
    });
  }

  createSession(user: string, previousItems: string[] | null,
                mode: Mode = "human"): Promise<SessionState> {
    return this.post("/v1/sessions", { user, previous_items: previousItems, mode });
  }

  getSession(id: string): Promise<SessionState> {
    return requestJson<SessionState>(this.fetchImpl, this.url(`/v1/sessions/${id}`));
  }

  nextTurn(id: string): Promise<SystemAction> {
    return this.post(`/v1/sessions/${id}/turn`);
  }

  answerAttribute(id: string, value: AttributeAnswer,
                  activated: boolean): Promise<FeedbackResult> {
    return this.post(`/v1/sessions/${id}/feedback`,
                     { type: "attribute", value, activated });
  }

  acceptItem(id: string, item: string): Promise<FeedbackResult> {
    return this.post(`/v1/sessions/${id}/feedback`,
                     { type: "recommendation", accepted_item: item });
  }

  rejectAll(id: string): Promise<FeedbackResult> {
    return this.post(`/v1/sessions/${id}/feedback`,
                     { type: "recommendation", reject_all: true });
  }

  health(): Promise<{ status: string }> {
    return requestJson(this.fetchImpl, this.url("/v1/health"));
  }
}
