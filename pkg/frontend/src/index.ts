export { PackEnv, EnvActionError, type PackEnvOptions } from "./env.js";
export { mulberry32, randBelow } from "./rng.js";
export type { EnvReply, Mode, ObsPayload, Phase, StepInfo } from "./protocol.js";
export { toStepInfo } from "./protocol.js";
