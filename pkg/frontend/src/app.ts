/**
 * DOM wiring for the elicitation form: one question at a time, a draggable
 * bar per interval, a live sum badge, and Next/Export gating.
 */

import { SurveyDefinition, SurveySession, SurveyQuestion } from "./model.js";

const BAR_HEIGHT = 160;

function fmt(x: number, digits = 2): string {
    return x.toFixed(digits);
}

function binEdges(support: [number, number], n: number): number[] {
    const [lo, hi] = support;
    return Array.from({ length: n + 1 }, (_, i) => lo + ((hi - lo) * i) / n);
}

export class SurveyApp {
    private session: SurveySession;
    private index = -1; // -1 shows the worked example page
    private root: HTMLElement;

    constructor(root: HTMLElement, expertId: string, def: SurveyDefinition) {
        this.root = root;
        this.session = new SurveySession(expertId, def);
        this.render();
    }

    private get questions(): SurveyQuestion[] {
        return this.session.definition.questions;
    }

    private render(): void {
        this.root.textContent = "";
        if (this.index < 0) {
            this.renderExample();
        } else if (this.index < this.questions.length) {
            this.renderQuestion(this.questions[this.index]);
        } else {
            this.renderExport();
        }
    }

    /** A completed sample question so experts see the mechanics first. */
    private renderExample(): void {
        const page = document.createElement("div");
        page.innerHTML = `
            <h2>${this.session.definition.title}</h2>
            <p>For each question you will distribute probability over fixed
            intervals by dragging the bars. The bars must sum to exactly one
            before you can continue. Here is a completed example:</p>`;
        const demo = [0, 0, 0.1, 0.2, 0.4, 0.2, 0.1, 0, 0, 0];
        const chart = document.createElement("div");
        chart.className = "bars readonly";
        for (const p of demo) {
            const bar = document.createElement("div");
            bar.className = "bar";
            bar.style.height = `${p * BAR_HEIGHT}px`;
            bar.title = fmt(p);
            chart.appendChild(bar);
        }
        page.appendChild(chart);
        const btn = document.createElement("button");
        btn.textContent = "Begin survey";
        btn.onclick = () => { this.index = 0; this.render(); };
        page.appendChild(btn);
        this.root.appendChild(page);
    }

    private renderQuestion(q: SurveyQuestion): void {
        const st = this.session.state(q.id);
        const page = document.createElement("div");
        const n = this.questions.length;
        page.innerHTML = `<h3>Question ${this.index + 1} of ${n}</h3><p>${q.prose}</p>`;

        if (st.support === null) {
            this.renderBoundsForm(page, q);
            this.root.appendChild(page);
            return;
        }

        const edges = binEdges(st.support, st.binProbs.length);
        const chart = document.createElement("div");
        chart.className = "bars";
        st.binProbs.forEach((p, i) => {
            const cell = document.createElement("div");
            cell.className = "cell";
            const input = document.createElement("input");
            input.type = "range";
            input.min = "0";
            input.max = "1";
            input.step = "0.01";
            input.value = String(p);
            input.oninput = () => {
                this.session.setBin(q.id, i, Number(input.value));
                this.render();
            };
            const label = document.createElement("span");
            label.textContent = `${fmt(edges[i])}–${fmt(edges[i + 1])}: ${fmt(p)}`;
            cell.append(input, label);
            chart.appendChild(cell);
        });
        page.appendChild(chart);

        const sum = this.session.sum(q.id);
        const badge = document.createElement("p");
        badge.className = this.session.isComplete(q.id) ? "sum ok" : "sum bad";
        badge.textContent = this.session.isComplete(q.id)
            ? `Sum: ${fmt(sum)} ✓`
            : `Sum: ${fmt(sum)} (off by ${fmt(this.session.deficit(q.id), 3)})`;
        page.appendChild(badge);

        const next = document.createElement("button");
        next.textContent = this.index + 1 < n ? "Next" : "Review & export";
        next.disabled = !this.session.isComplete(q.id);
        next.onclick = () => { this.index += 1; this.render(); };
        page.appendChild(next);
        if (this.index > 0) {
            const back = document.createElement("button");
            back.textContent = "Back";
            back.onclick = () => { this.index -= 1; this.render(); };
            page.appendChild(back);
        }
        this.root.appendChild(page);
    }

    private renderBoundsForm(page: HTMLElement, q: SurveyQuestion): void {
        const info = document.createElement("p");
        info.textContent =
            "First give the lowest and highest values you consider possible:";
        const lo = document.createElement("input");
        const hi = document.createElement("input");
        lo.type = hi.type = "number";
        lo.placeholder = "lower bound";
        hi.placeholder = "upper bound";
        const ok = document.createElement("button");
        ok.textContent = "Set bounds";
        ok.onclick = () => {
            try {
                this.session.setBounds(q.id, Number(lo.value), Number(hi.value));
                this.render();
            } catch (err) {
                alert(String(err));
            }
        };
        page.append(info, lo, hi, ok);
    }

    private renderExport(): void {
        const page = document.createElement("div");
        page.innerHTML = "<h3>All questions complete</h3>";
        const btn = document.createElement("button");
        btn.textContent = "Download responses";
        btn.onclick = () => {
            // the session re-checks completion; tampered state is refused here
            const blob = new Blob([this.session.exportJson()],
                                  { type: "application/json" });
            const a = document.createElement("a");
            a.href = URL.createObjectURL(blob);
            a.download = `${this.session.expertId}-responses.json`;
            a.click();
            URL.revokeObjectURL(a.href);
        };
        page.appendChild(btn);
        this.root.appendChild(page);
    }
}

export async function boot(): Promise<void> {
    const root = document.getElementById("app");
    if (!root) throw new Error("missing #app element");
    const params = new URLSearchParams(window.location.search);
    const defUrl = params.get("survey") ?? "survey.json";
    const def: SurveyDefinition = await (await fetch(defUrl)).json();
    const expertId = window.prompt("Your expert id:") ?? "anonymous";
    new SurveyApp(root, expertId, def);
}

if (typeof document !== "undefined" && document.getElementById("app")) {
    boot().catch(err => alert(String(err)));
}
