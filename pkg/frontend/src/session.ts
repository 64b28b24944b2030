// Conversation flow controller: the single mutable state behind the UI.
//
// The server is the source of truth; this module only replays what it said.
// Every mutation goes service-first and the local view is rebuilt from the
// response, so a reload can always restore via GET /v1/sessions/{id}.

import {
  ApiError, AttributeAnswer, FeedbackResult, SessionApi, SessionState, SystemAction,
  TerminationSummary,
} from "./api.js";

export interface ChatTurn {
  role: "system" | "user";
  kind: "ask" | "recommend" | "feedback";
  text: string;
  payload: unknown;
}

export interface FlowState {
  sessionId: string | null;
  user: string | null;
  previousItems: string[];
  awaiting: "idle" | "system" | "user" | "done";
  pending: SystemAction | null;
  chat: ChatTurn[];
  candidates: number | null;
  acceptedAttributes: string[];
  rejectedAttributes: string[];
  rewards: number[];
  summary: TerminationSummary | null;
  error: string | null;
  busy: boolean;
}

export function initialState(): FlowState {
  return {
    sessionId: null, user: null, previousItems: [], awaiting: "idle", pending: null,
    chat: [], candidates: null, acceptedAttributes: [], rejectedAttributes: [],
    rewards: [], summary: null, error: null, busy: false,
  };
}

function askText(action: SystemAction): string {
  if (action.kind === "ask") {
    return `Do you like "${action.attribute}"?`;
  }
  const names = action.items.map((it) => it.item).join(", ");
  return `How about one of these? ${names}`;
}

function feedbackText(value: string): string {
  switch (value) {
    case "accept": return "Yes, I like that.";
    case "reject": return "No, not that.";
    case "unknown": return "I don't know yet.";
    case "reject_all": return "None of these.";
    default: return `Accepted: ${value}`;
  }
}

export class SessionFlow {
  state: FlowState = initialState();

  constructor(private api: SessionApi) {}

  private async guard<T>(work: () => Promise<T>): Promise<FlowState> {
    if (this.state.busy) {
      return this.state;  // double-click guard: ignore while a call is in flight
    }
    this.state.busy = true;
    this.state.error = null;
    try {
      await work();
    } catch (err) {
      this.state.error = err instanceof ApiError
        ? `service error (${err.status}): ${err.message}`
        : String(err);
    } finally {
      this.state.busy = false;
    }
    return this.state;
  }

  private applySession(session: SessionState): void {
    this.state.sessionId = session.id;
    this.state.user = session.user;
    this.state.previousItems = session.previous_items;
    this.state.candidates = session.candidates;
    this.state.acceptedAttributes = session.accepted_attributes;
    this.state.rejectedAttributes = session.rejected_attributes;
    this.state.rewards = session.rewards;
    this.state.summary = session.summary ?? null;
    this.state.awaiting = session.done ? "done" : session.awaiting;
  }

  private applyFeedback(result: FeedbackResult): void {
    this.state.candidates = result.candidates;
    this.state.rewards = [...this.state.rewards, result.reward];
    if (result.done) {
      this.state.awaiting = "done";
      this.state.summary = result.summary ?? null;
      this.state.pending = null;
    } else {
      this.state.awaiting = "system";
      this.state.pending = null;
    }
  }

  private pushSystem(action: SystemAction): void {
    this.state.pending = action;
    this.state.awaiting = "user";
    this.state.chat.push({
      role: "system",
      kind: action.kind,
      text: askText(action),
      payload: action,
    });
  }

  private async fetchTurn(): Promise<void> {
    const action = await this.api.nextTurn(this.requireSession());
    this.pushSystem(action);
  }

  private requireSession(): string {
    if (!this.state.sessionId) {
      throw new Error("no active session");
    }
    return this.state.sessionId;
  }

  async start(user: string, previousItems: string[] | null): Promise<FlowState> {
    return this.guard(async () => {
      this.state = initialState();
      const session = await this.api.createSession(user, previousItems, "human");
      this.applySession(session);
      await this.fetchTurn();
      await this.refreshSidebar();
    });
  }

  async answerAttribute(value: AttributeAnswer, activated: boolean): Promise<FlowState> {
    return this.guard(async () => {
      if (this.state.pending?.kind !== "ask") {
        throw new Error("no attribute question pending");
      }
      this.state.chat.push({ role: "user", kind: "feedback",
                             text: feedbackText(value), payload: { value, activated } });
      const result = await this.api.answerAttribute(this.requireSession(), value, activated);
      this.applyFeedback(result);
      await this.refreshSidebar();
      if (!result.done) {
        await this.fetchTurn();
      }
    });
  }

  async acceptItem(item: string): Promise<FlowState> {
    return this.guard(async () => {
      if (this.state.pending?.kind !== "recommend") {
        throw new Error("no recommendation pending");
      }
      this.state.chat.push({ role: "user", kind: "feedback",
                             text: `I'll take ${item}.`, payload: { accepted_item: item } });
      const result = await this.api.acceptItem(this.requireSession(), item);
      this.applyFeedback(result);
      await this.refreshSidebar();
      if (!result.done) {
        await this.fetchTurn();
      }
    });
  }

  async rejectAll(): Promise<FlowState> {
    return this.guard(async () => {
      if (this.state.pending?.kind !== "recommend") {
        throw new Error("no recommendation pending");
      }
      this.state.chat.push({ role: "user", kind: "feedback",
                             text: feedbackText("reject_all"), payload: { reject_all: true } });
      const result = await this.api.rejectAll(this.requireSession());
      this.applyFeedback(result);
      await this.refreshSidebar();
      if (!result.done) {
        await this.fetchTurn();
      }
    });
  }

  /** Rebuild the whole view from the server after a reload. */
  async restore(sessionId: string): Promise<FlowState> {
    return this.guard(async () => {
      this.state = initialState();
      this.state.sessionId = sessionId;
      const session = await this.api.getSession(sessionId);
      this.applySession(session);
      this.state.chat = rebuildChat(session);
      if (session.pending_action) {
        this.state.pending = session.pending_action;
        this.state.awaiting = "user";
      } else if (!session.done) {
        await this.fetchTurn();
      }
    });
  }

  private async refreshSidebar(): Promise<void> {
    const session = await this.api.getSession(this.requireSession());
    this.state.candidates = session.candidates;
    this.state.acceptedAttributes = session.accepted_attributes;
    this.state.rejectedAttributes = session.rejected_attributes;
  }
}

export function rebuildChat(session: SessionState): ChatTurn[] {
  const chat: ChatTurn[] = [];
  for (const entry of session.transcript) {
    if (entry.action.kind === "ask") {
      chat.push({ role: "system", kind: "ask",
                  text: `Do you like "${entry.action.attribute}"?`, payload: entry.action });
      chat.push({ role: "user", kind: "feedback",
                  text: feedbackText(entry.feedback.value ?? ""), payload: entry.feedback });
    } else {
      chat.push({ role: "system", kind: "recommend",
                  text: `How about one of these? ${(entry.action.items ?? []).join(", ")}`,
                  payload: entry.action });
      const rank = entry.feedback.accepted_rank;
      chat.push({ role: "user", kind: "feedback",
                  text: rank ? `I'll take the one at position ${rank}.` : feedbackText("reject_all"),
                  payload: entry.feedback });
    }
  }
  if (session.pending_action) {
    chat.push({ role: "system", kind: session.pending_action.kind,
                text: askText(session.pending_action), payload: session.pending_action });
  }
  return chat;
}
