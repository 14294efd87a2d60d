/** Message shapes of the JSON-lines episode protocol spoken by
 * `packbench env-stdio`. All numeric reward fields arrive as 12-decimal
 * strings so they can be compared bit for bit against trajectory logs; the
 * binding never recomputes them. */

export type Phase = "shape" | "rotation" | "location" | "done";
export type Mode = "vanilla" | "easy";

export interface ObsPayload {
  remaining: number[];
  counts?: number[];
  candidates?: [number, number, number][];
  rotations?: number[];
  pooled_box?: number[];
}

export interface EnvReply {
  type: "ready" | "step" | "error";
  phase?: Phase;
  action_count?: number;
  reward?: string;
  cum_reward?: string;
  done?: boolean;
  error?: string;
  detail?: string;
  obs?: ObsPayload;
}

export interface StepInfo {
  phase: Phase;
  actionCount: number;
  reward: string;
  cumReward: string;
  done: boolean;
  obs: ObsPayload;
}

export function toStepInfo(reply: EnvReply): StepInfo {
  if (reply.type === "error" || reply.phase === undefined) {
    throw new Error(`cannot convert ${reply.type} reply to step info`);
  }
  return {
    phase: reply.phase,
    actionCount: reply.action_count ?? 0,
    reward: reply.reward ?? "0.000000000000",
    cumReward: reply.cum_reward ?? "0.000000000000",
    done: reply.done ?? false,
    obs: reply.obs ?? { remaining: [] },
  };
}
