/**
 * Survey state and export logic, kept free of DOM concerns so it can be
 * unit-tested and driven by scripts.
 */

export const SUM_TOLERANCE = 1e-6;
export const RESPONSES_SCHEMA = "mfabayes/expert-responses/v1";
export const DEFAULT_BIN_COUNT = 10;
export const DEFAULT_INTERQUANTILE = [0.05, 0.45, 0.45, 0.05];

export type QuestionKind = "allocation" | "external-input" | "seeding";

export interface SurveyQuestion {
    /** quantity id, e.g. "phi:A->B", "q:A", or a seeding question id */
    id: string;
    prose: string;
    kind: QuestionKind;
    /** fixed support; allocations are always [0, 1], others may be null so
     *  the expert declares their own bounds first */
    support: [number, number] | null;
    binCount?: number;
}

export interface SurveyDefinition {
    title: string;
    questions: SurveyQuestion[];
}

export interface QuestionState {
    support: [number, number] | null;
    binProbs: number[];
}

export class SurveyError extends Error {}

export function validateDefinition(def: SurveyDefinition): void {
    const seen = new Set<string>();
    for (const q of def.questions) {
        if (seen.has(q.id)) throw new SurveyError(`duplicate question id ${q.id}`);
        seen.add(q.id);
        const bins = q.binCount ?? DEFAULT_BIN_COUNT;
        if (bins < 2) throw new SurveyError(`question ${q.id}: bin count ${bins} < 2`);
        if (q.kind === "allocation") {
            if (!q.support || q.support[0] !== 0 || q.support[1] !== 1) {
                throw new SurveyError(
                    `question ${q.id}: allocation questions use fixed [0, 1] support`);
            }
        }
        if (q.support && !(q.support[0] < q.support[1])) {
            throw new SurveyError(`question ${q.id}: support must be increasing`);
        }
    }
}

export class SurveySession {
    readonly expertId: string;
    readonly definition: SurveyDefinition;
    private states = new Map<string, QuestionState>();

    constructor(expertId: string, definition: SurveyDefinition) {
        if (!expertId.trim()) throw new SurveyError("expert id must not be empty");
        validateDefinition(definition);
        this.expertId = expertId;
        this.definition = definition;
        for (const q of definition.questions) {
            this.states.set(q.id, {
                support: q.support ? [...q.support] : null,
                binProbs: new Array(q.binCount ?? DEFAULT_BIN_COUNT).fill(0),
            });
        }
    }

    private question(id: string): SurveyQuestion {
        const q = this.definition.questions.find(q => q.id === id);
        if (!q) throw new SurveyError(`unknown question ${id}`);
        return q;
    }

    state(id: string): QuestionState {
        this.question(id);
        return this.states.get(id)!;
    }

    /** Declare bounds for an unbounded quantity; resets its bars. */
    setBounds(id: string, lower: number, upper: number): void {
        const q = this.question(id);
        if (q.support) throw new SurveyError(`question ${id} has fixed support`);
        if (!Number.isFinite(lower) || !Number.isFinite(upper) || !(lower < upper)) {
            throw new SurveyError(`question ${id}: bounds must satisfy lower < upper`);
        }
        const st = this.states.get(id)!;
        st.support = [lower, upper];
        st.binProbs.fill(0);
    }

    setBin(id: string, bin: number, value: number): void {
        const st = this.state(id);
        if (st.support === null) {
            throw new SurveyError(`question ${id}: declare bounds before editing bars`);
        }
        if (bin < 0 || bin >= st.binProbs.length) {
            throw new SurveyError(`question ${id}: bin ${bin} out of range`);
        }
        if (!Number.isFinite(value) || value < 0 || value > 1) {
            throw new SurveyError(`question ${id}: bar value must be in [0, 1]`);
        }
        st.binProbs[bin] = value;
    }

    setAllBins(id: string, values: number[]): void {
        const st = this.state(id);
        if (values.length !== st.binProbs.length) {
            throw new SurveyError(
                `question ${id}: expected ${st.binProbs.length} values, got ${values.length}`);
        }
        values.forEach((v, i) => this.setBin(id, i, v));
    }

    sum(id: string): number {
        return this.state(id).binProbs.reduce((a, b) => a + b, 0);
    }

    /** How far the running sum is from one (signed; shown in the UI badge). */
    deficit(id: string): number {
        return 1 - this.sum(id);
    }

    isComplete(id: string): boolean {
        const st = this.state(id);
        return st.support !== null && Math.abs(this.sum(id) - 1) <= SUM_TOLERANCE;
    }

    incompleteQuestions(): string[] {
        return this.definition.questions
            .filter(q => !this.isComplete(q.id))
            .map(q => q.id);
    }

    allComplete(): boolean {
        return this.incompleteQuestions().length === 0;
    }

    /**
     * Build the export document. Refuses while any question's bars do not
     * sum to one within SUM_TOLERANCE.
     */
    exportDoc(): object {
        const missing = this.incompleteQuestions();
        if (missing.length > 0) {
            throw new SurveyError(
                `cannot export: incomplete questions: ${missing.join(", ")}`);
        }
        const seeding = [];
        const target: Record<string, object> = {};
        for (const q of this.definition.questions) {
            const st = this.states.get(q.id)!;
            const hist = { support: st.support!, bin_probs: [...st.binProbs] };
            if (q.kind === "seeding") {
                seeding.push({
                    question_id: q.id,
                    ...hist,
                    interquantile_probs: DEFAULT_INTERQUANTILE,
                });
            } else {
                target[q.id] = hist;
            }
        }
        return {
            schema: RESPONSES_SCHEMA,
            expert_id: this.expertId,
            seeding,
            target,
        };
    }

    exportJson(): string {
        return JSON.stringify(this.exportDoc(), null, 2) + "\n";
    }
}
