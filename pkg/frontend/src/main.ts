// Entry point: picks dashboard or session view from the URL (?session=<id>),
// re-renders on every state change, and polls the service every 2 s. All
// keyboard handling lives here so the value buttons stay plain HTML.

import { ApiClient, SessionConfig } from "./api.js";
import { SessionController } from "./controller.js";
import { bannerHtml, dashboardHtml, sessionHtml } from "./view.js";

const POLL_MS = 2000;

function startSessionView(api: ApiClient, root: HTMLElement, sessionId: string): void {
  const form = document.getElementById("create-form");
  if (form) form.hidden = true;

  const ctl = new SessionController(api, sessionId, () => {
    root.innerHTML = sessionHtml(ctl);
  });
  void ctl.tick();
  setInterval(() => void ctl.tick(), POLL_MS);

  root.addEventListener("click", (ev) => {
    const target = (ev.target as HTMLElement).closest("[data-action]");
    if (!(target instanceof HTMLElement)) return;
    const action = target.dataset.action;
    if (action === "select") ctl.select(Number(target.dataset.value));
    else if (action === "submit") void ctl.submit();
    else if (action === "retry") void ctl.tick();
  });

  document.addEventListener("keydown", (ev) => {
    const el = ev.target as HTMLElement;
    if (el.tagName === "INPUT" || el.tagName === "TEXTAREA" || el.tagName === "SELECT") return;
    if (ev.key >= "1" && ev.key <= "9") {
      ctl.select(Number(ev.key) - 1);
    } else if (ev.key === "Enter") {
      ev.preventDefault();
      void ctl.submit();
    }
  });
}

function startDashboard(api: ApiClient, root: HTMLElement): void {
  const render = async () => {
    try {
      const sessions = await api.listSessions();
      root.innerHTML = dashboardHtml(sessions);
    } catch (e) {
      root.innerHTML = bannerHtml(
        { ok: false, message: e instanceof Error ? e.message : String(e) },
        null,
      );
    }
  };
  void render();
  setInterval(() => void render(), POLL_MS);

  root.addEventListener("click", (ev) => {
    const target = (ev.target as HTMLElement).closest("[data-action=retry]");
    if (target) void render();
  });

  const form = document.getElementById("create-form") as HTMLFormElement | null;
  if (!form) return;
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void (async () => {
      const errBox = form.querySelector(".form-error") as HTMLElement;
      errBox.textContent = "";
      const data = new FormData(form);
      const config: SessionConfig = {
        annotator: data.get("annotator") === "oracle" ? "oracle" : "human",
        seed: Number(data.get("seed") ?? 0),
      };
      const extra = String(data.get("config") ?? "").trim();
      if (extra) {
        try {
          Object.assign(config, JSON.parse(extra));
        } catch {
          errBox.textContent = "extra config is not valid JSON";
          return;
        }
      }
      try {
        const { id } = await api.createSession(String(data.get("bundle") ?? ""), config);
        location.search = `?session=${id}`;
      } catch (e) {
        errBox.textContent = e instanceof Error ? e.message : String(e);
      }
    })();
  });
}

export function boot(): void {
  const api = new ApiClient();
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const sessionId = new URLSearchParams(location.search).get("session");
  if (sessionId) startSessionView(api, root, sessionId);
  else startDashboard(api, root);
}

boot();
