// HTML builders for the two screens. Pure string-in string-out so the
// rendering logic tests without a DOM; main.ts owns the actual element and
// event wiring. Server strings are escaped even though the service is
// same-origin; annotators paste bundle paths around.

import { IterationDoc, SessionSummary } from "./api.js";
import { chartSvg } from "./chart.js";
import { budgetLabel, CardState, Connection, iterationLabel, SessionController } from "./controller.js";

export function esc(s: string): string {
  return s.replace(/[&<>"']/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&#39;" })[c]!);
}

export function phaseBadge(phase: string): string {
  const label = phase === "awaiting_annotations" ? "awaiting annotations" : phase;
  return `<span class="badge badge-${esc(phase)}">${esc(label)}</span>`;
}

export function bannerHtml(connection: Connection, sessionError: string | null): string {
  if (!connection.ok) {
    return (
      `<div class="banner banner-error">connection lost: ${esc(connection.message)} ` +
      `<button data-action="retry">retry</button></div>`
    );
  }
  if (sessionError) {
    return `<div class="banner banner-error">session failed: ${esc(sessionError)}</div>`;
  }
  return "";
}

export function dashboardHtml(sessions: SessionSummary[]): string {
  if (sessions.length === 0) {
    return `<p class="empty">no sessions yet; start one below.</p>`;
  }
  const rows = sessions
    .map(
      (s) => `
      <tr>
        <td><a href="?session=${esc(s.id)}">${esc(s.id)}</a></td>
        <td>${esc(s.bundle)}</td>
        <td>${esc(s.mode)} / ${esc(s.annotator)}</td>
        <td>${phaseBadge(s.phase)}</td>
        <td>${esc(iterationLabel(s, []))}</td>
        <td>${s.cumulative_annotations}</td>
        <td>${s.pending_count}</td>
      </tr>`,
    )
    .join("");
  return `
    <table class="sessions">
      <thead><tr><th>session</th><th>bundle</th><th>mode</th><th>phase</th><th>snapshots</th><th>annotated</th><th>pending</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`;
}

function uncertaintyBar(u: number | null): string {
  if (u === null) {
    return `<div class="ubar"><span class="ubar-note">seed query: no model ranking yet</span></div>`;
  }
  const pct = Math.round(Math.min(1, Math.max(0, u)) * 100);
  return (
    `<div class="ubar" title="normalized predictive entropy">` +
    `<div class="ubar-fill" style="width:${pct}%"></div>` +
    `<span class="ubar-note">uncertainty ${pct} / 100</span></div>`
  );
}

export function cardHtml(card: CardState, position: number, total: number): string {
  const q = card.query;
  const media = q.image_ref
    ? `<img class="card-image" src="${esc(q.image_ref)}" alt="sample ${q.sample}">`
    : `<div class="card-image card-placeholder">sample<br><strong>#${q.sample}</strong></div>`;
  const buttons = q.values
    .map(
      (v, j) =>
        `<button class="value${card.selected === j ? " selected" : ""}" data-action="select" data-value="${j}">` +
        `<kbd>${j + 1}</kbd> ${esc(v)}</button>`,
    )
    .join("");
  return `
    <div class="card">
      <div class="card-head">
        <span class="card-counter">query ${position} of ${total}</span>
        <span class="card-concept">${esc(q.concept_name)}</span>
      </div>
      ${media}
      ${uncertaintyBar(q.uncertainty)}
      ${card.error ? `<div class="card-error">${esc(card.error)}</div>` : ""}
      <div class="values">${buttons}</div>
      <button class="submit" data-action="submit" ${card.selected === null ? "disabled" : ""}>
        submit <kbd>enter</kbd>
      </button>
      <p class="hint">digits select, enter submits; answers post in batches of 10</p>
    </div>`;
}

export function metricChartHtml(history: IterationDoc[]): string {
  const pick = (k: "f1_c" | "f1_y" | "ecce_r") => history.map((h) => h.metrics[k]);
  return chartSvg([
    { label: "F1 concepts", color: "#2563eb", points: pick("f1_c") },
    { label: "F1 task", color: "#16a34a", points: pick("f1_y") },
    { label: "ECCE-R", color: "#dc2626", points: pick("ecce_r") },
  ]);
}

export function sessionHtml(ctl: SessionController): string {
  const s = ctl.summary;
  if (!s) return `<p class="empty">loading session…</p>`;
  const parts: string[] = [];
  parts.push(bannerHtml(ctl.connection, s.error));
  parts.push(`
    <div class="session-head">
      <a href="?" class="back">&larr; sessions</a>
      <h2>${esc(s.id)}</h2>
      ${phaseBadge(s.phase)}
      <span>snapshot ${esc(iterationLabel(s, ctl.history))}</span>
      <span>annotations ${esc(budgetLabel(s, ctl.history))}</span>
      ${ctl.outbox.length > 0 ? `<span class="outbox">${ctl.outbox.length} queued</span>` : ""}
    </div>`);
  if (s.phase === "awaiting_annotations" && ctl.current) {
    parts.push(cardHtml(ctl.current, ctl.outbox.length + 1, ctl.outbox.length + ctl.queue.length));
  } else if (s.phase === "fitting" || (s.phase === "awaiting_annotations" && !ctl.current)) {
    parts.push(`<div class="fitting">fitting&hellip; the next queries appear when the models finish</div>`);
  } else if (s.phase === "finished") {
    parts.push(`<div class="finished">run complete: every budgeted annotation is spent.</div>`);
  }
  parts.push(`<div class="chart">${metricChartHtml(ctl.history)}</div>`);
  return parts.join("\n");
}
