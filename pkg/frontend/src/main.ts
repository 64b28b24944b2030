import { SessionApi } from "./api.js";
import { SessionFlow } from "./session.js";
import { PlaygroundView, wireStartForm } from "./ui.js";

const flow = new SessionFlow(new SessionApi(""));
const view = new PlaygroundView(flow);
wireStartForm(flow, view);

// restore a session from the URL hash after a reload
const existing = window.location.hash.slice(1);
if (existing) {
  flow.restore(existing).then((state) => view.render(state));
}
