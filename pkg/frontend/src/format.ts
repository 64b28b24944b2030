// Small display helpers kept DOM-free so they are unit-testable.

import { TerminationSummary } from "./api.js";

export function formatSummary(summary: TerminationSummary): string {
  if (!summary.success) {
    return "Out of turns - no recommendation was accepted.";
  }
  const hn = summary.hn !== undefined ? `, score ${summary.hn.toFixed(3)}` : "";
  return `Accepted at turn ${summary.turn}, list position ${summary.rank}${hn}.`;
}

export function formatRewardTrace(rewards: number[]): string {
  if (rewards.length === 0) {
    return "-";
  }
  const total = rewards.reduce((a, b) => a + b, 0);
  return `${rewards.map((r) => r.toFixed(2)).join(" ")}  (total ${total.toFixed(2)})`;
}

export function formatCandidates(count: number | null): string {
  return count === null ? "-" : `${count} candidate item${count === 1 ? "" : "s"}`;
}

export function chipList(values: string[]): string {
  return values.length ? values.join(", ") : "none";
}
