// App shell: frame list, mode switching, overlay toggles, what-if inputs,
// template building. All server state flows through ApiClient.

import { AnnotateFlow } from "./annotate.js";
import { ApiClient } from "./api.js";
import { ReviewFlow } from "./review.js";
import { AnnotationSession, PendingEditsError } from "./state.js";
import { CanvasViewer } from "./viewer.js";

const DEFAULT_LED_IDS = [0, 1, 2, 3, 4];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const viewer = new CanvasViewer(el<HTMLCanvasElement>("viewer"));
  const status = el<HTMLElement>("status");
  const say = (msg: string) => {
    status.textContent = msg;
  };

  const session = new AnnotationSession(DEFAULT_LED_IDS);
  const annotate = new AnnotateFlow(api, viewer, session, say);
  const review = new ReviewFlow(api, viewer, say);
  let mode: "annotate" | "review" = "review";
  let currentFrame: string | null = null;
  const selectedForTemplate = new Set<string>();

  const frameList = el<HTMLUListElement>("frames");
  const page = await api.listFrames(1, 500);
  for (const fid of page.frames) {
    const li = document.createElement("li");
    const open = document.createElement("a");
    open.textContent = fid;
    open.href = "#";
    open.addEventListener("click", (ev) => {
      ev.preventDefault();
      void openFrame(fid);
    });
    const pick = document.createElement("input");
    pick.type = "checkbox";
    pick.title = "include in template build";
    pick.addEventListener("change", () => {
      if (pick.checked) selectedForTemplate.add(fid);
      else selectedForTemplate.delete(fid);
    });
    li.append(pick, open);
    frameList.append(li);
  }

  async function openFrame(fid: string): Promise<void> {
    try {
      if (mode === "annotate") await annotate.enter(fid);
      else await review.enter(fid);
      currentFrame = fid;
      el<HTMLElement>("current-frame").textContent = fid;
    } catch (err) {
      if (err instanceof PendingEditsError) {
        if (confirm("Discard pending edits?")) {
          session.discardPending();
          await openFrame(fid);
        }
        return;
      }
      say(String(err));
    }
  }

  el<HTMLSelectElement>("mode").addEventListener("change", (ev) => {
    mode = (ev.target as HTMLSelectElement).value as typeof mode;
    if (currentFrame) void openFrame(currentFrame);
  });

  for (const name of ["detected", "templateProjected", "labels"] as const) {
    el<HTMLInputElement>(`toggle-${name}`).addEventListener("change", (ev) => {
      session.overlays[name] = (ev.target as HTMLInputElement).checked;
      viewer.draw();
    });
  }
  el<HTMLInputElement>("toggle-snap").addEventListener("change", (ev) => {
    session.snapEnabled = (ev.target as HTMLInputElement).checked;
  });

  el<HTMLButtonElement>("save").addEventListener("click", () => {
    if (mode === "annotate") void annotate.save();
    else void review.submit();
  });
  el<HTMLButtonElement>("reject").addEventListener("click", () => {
    if (mode === "review") void review.submit("rejected");
  });
  el<HTMLButtonElement>("rerun").addEventListener("click", () => {
    const overrides: Record<string, unknown> = {};
    const eps = el<HTMLInputElement>("override-eps").value;
    const pct = el<HTMLInputElement>("override-percentile").value;
    if (eps) overrides["sla.eps"] = Number(eps);
    if (pct) overrides["detect.percentile"] = Number(pct);
    if (mode === "review") void review.whatIf(overrides);
  });

  el<HTMLButtonElement>("build-template").addEventListener("click", () => {
    const name = el<HTMLInputElement>("template-name").value || "ui-layout";
    const frames = [...selectedForTemplate];
    if (frames.length === 0 && currentFrame) frames.push(currentFrame);
    api
      .buildTemplate(frames, name)
      .then((t) => say(`built template ${t.layout_name} (K=${t.K}) -> ${t.path}`))
      .catch((err) => say(String(err)));
  });

  window.addEventListener("keydown", (ev) => {
    if (ev.target instanceof HTMLInputElement) return;
    if (mode === "annotate" && annotate.handleKey(ev)) ev.preventDefault();
  });

  if (page.frames.length > 0) await openFrame(page.frames[0]);
  say(`loaded ${page.total} frames`);
}

boot().catch((err) => {
  document.body.insertAdjacentHTML("beforeend", `<pre class="boot-error">${String(err)}</pre>`);
});
