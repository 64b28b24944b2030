// DOM rendering and event wiring. All state lives in SessionFlow; this file
// only projects FlowState into elements and forwards clicks.

import { RecommendAction } from "./api.js";
import { chipList, formatCandidates, formatRewardTrace, formatSummary } from "./format.js";
import { FlowState, SessionFlow } from "./session.js";

function el<K extends keyof HTMLElementTagNameMap>(tag: K, cls?: string,
                                                   text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class PlaygroundView {
  private chatBox = document.getElementById("chat") as HTMLElement;
  private controls = document.getElementById("controls") as HTMLElement;
  private banner = document.getElementById("banner") as HTMLElement;
  private sidebar = {
    candidates: document.getElementById("side-candidates") as HTMLElement,
    accepted: document.getElementById("side-accepted") as HTMLElement,
    rejected: document.getElementById("side-rejected") as HTMLElement,
    rewards: document.getElementById("side-rewards") as HTMLElement,
  };

  constructor(private flow: SessionFlow) {}

  render(state: FlowState): void {
    this.banner.textContent = state.error ?? "";
    this.banner.style.display = state.error ? "block" : "none";

    this.chatBox.replaceChildren();
    for (const turn of state.chat) {
      const bubble = el("div", `bubble ${turn.role}`, turn.text);
      this.chatBox.appendChild(bubble);
    }
    if (state.summary) {
      const cls = state.summary.success ? "summary success" : "summary failure";
      this.chatBox.appendChild(el("div", cls, formatSummary(state.summary)));
    }
    this.chatBox.scrollTop = this.chatBox.scrollHeight;

    this.sidebar.candidates.textContent = formatCandidates(state.candidates);
    this.sidebar.accepted.textContent = chipList(state.acceptedAttributes);
    this.sidebar.rejected.textContent = chipList(state.rejectedAttributes);
    this.sidebar.rewards.textContent = formatRewardTrace(state.rewards);

    this.renderControls(state);
    if (state.sessionId) {
      window.location.hash = state.sessionId;
    }
  }

  private renderControls(state: FlowState): void {
    this.controls.replaceChildren();
    if (state.awaiting !== "user" || !state.pending) {
      if (state.awaiting === "done") {
        this.controls.appendChild(el("p", "hint", "Session finished - start a new one above."));
      }
      return;
    }
    if (state.pending.kind === "ask") {
      const activated = el("label", "toggle");
      const box = el("input") as HTMLInputElement;
      box.type = "checkbox";
      box.id = "activated-toggle";
      activated.append(box, document.createTextNode(" this activated my interest"));

      for (const [label, value] of [["Yes", "accept"], ["No", "reject"],
                                    ["Don't know", "unknown"]] as const) {
        const btn = el("button", `answer ${value}`, label);
        btn.onclick = async () => {
          this.render(await this.flow.answerAttribute(value, box.checked));
        };
        this.controls.appendChild(btn);
      }
      this.controls.appendChild(activated);
      return;
    }
    const rec = state.pending as RecommendAction;
    const cards = el("div", "cards");
    for (const item of rec.items) {
      const card = el("div", "card");
      card.appendChild(el("div", "card-title", item.item));
      card.appendChild(el("div", "card-attrs", item.attributes.join(", ")));
      const take = el("button", "take", "Accept");
      take.onclick = async () => {
        this.render(await this.flow.acceptItem(item.item));
      };
      card.appendChild(take);
      cards.appendChild(card);
    }
    this.controls.appendChild(cards);
    const none = el("button", "reject-all", "None of these");
    none.onclick = async () => {
      this.render(await this.flow.rejectAll());
    };
    this.controls.appendChild(none);
  }
}

export function wireStartForm(flow: SessionFlow, view: PlaygroundView): void {
  const form = document.getElementById("start-form") as HTMLFormElement;
  form.onsubmit = async (ev) => {
    ev.preventDefault();
    const user = (document.getElementById("user-input") as HTMLInputElement).value.trim();
    const prevRaw = (document.getElementById("prev-input") as HTMLInputElement).value.trim();
    const prev = prevRaw ? prevRaw.split(",").map((s) => s.trim()).filter(Boolean) : null;
    view.render(await flow.start(user, prev));
  };
}
