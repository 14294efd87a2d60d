/**
 * Bindings parity harness: the (reward, done, action_count) streams seen
 * through the binding must equal the core CLI's trajectory logs exactly, and
 * invalid actions must leave the episode untouched.
 */
import { execFile } from "node:child_process";
import { mkdtemp, readFile, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { PackEnv, EnvActionError } from "../src/env.js";
import { mulberry32, randBelow } from "../src/rng.js";

const run = promisify(execFile);
const PYTHON = process.env.PACKBENCH_PYTHON ?? "python3";

const TASKS = 5;
const SEQUENCES_PER_TASK = 4; // 20 sequences total

let workDir: string;
let datasetPath: string;

interface Recorded {
  actionCounts: number[];
  actions: number[];
  rewards: string[];
  dones: boolean[];
}

async function rolloutThroughBinding(taskIndex: number, seed: number): Promise<Recorded> {
  const env = await PackEnv.create({ datasetPath, taskIndex });
  const rand = mulberry32(seed);
  const rec: Recorded = { actionCounts: [], actions: [], rewards: [], dones: [] };
  try {
    while (!env.done) {
      const n = env.actionCount();
      expect(n).toBeGreaterThan(0);
      const action = randBelow(rand, n);
      rec.actionCounts.push(n);
      rec.actions.push(action);
      const info = await env.step(action);
      rec.rewards.push(info.reward);
      rec.dones.push(info.done);
    }
  } finally {
    await env.close();
  }
  return rec;
}

async function coreReplay(taskIndex: number, actions: number[], tag: string) {
  const actionsFile = join(workDir, `actions_${tag}.txt`);
  const logFile = join(workDir, `log_${tag}.txt`);
  const countsFile = join(workDir, `counts_${tag}.txt`);
  await writeFile(actionsFile, actions.join("\n") + "\n");
  await run(PYTHON, [
    "-m", "packbench.cli", "replay",
    "--dataset", datasetPath, "--task", String(taskIndex),
    "--mode", "vanilla", "--actions", actionsFile,
    "--out", logFile, "--action-counts", countsFile,
  ]);
  const logLines = (await readFile(logFile, "utf-8")).trim().split("\n");
  const counts = (await readFile(countsFile, "utf-8")).trim().split("\n").map(Number);
  const rewards = logLines.map((l) => l.split(" ")[3]);
  const dones = logLines.map((l) => l.split(" ")[4] === "1");
  return { counts, rewards, dones };
}

beforeAll(async () => {
  workDir = await mkdtemp(join(tmpdir(), "packbench-parity-"));
  const out = join(workDir, "dataset");
  await run(PYTHON, [
    "-m", "packbench.cli", "evolve",
    "--packs", String(TASKS), "--pool-size", "6", "--population", "10",
    "--generations", "6", "--seed", "21", "--out", out,
  ], { timeout: 240_000 });
  datasetPath = join(out, "packs.jsonl");
}, 300_000);

describe("bindings parity with the core trajectory logs", () => {
  it("matches reward, done and action_count streams on 20 random sequences", async () => {
    for (let task = 0; task < TASKS; task++) {
      for (let seq = 0; seq < SEQUENCES_PER_TASK; seq++) {
        const seed = 1000 * task + seq;
        const viaBinding = await rolloutThroughBinding(task, seed);
        const viaCore = await coreReplay(task, viaBinding.actions, `${task}_${seq}`);
        expect(viaBinding.rewards).toEqual(viaCore.rewards);
        expect(viaBinding.dones).toEqual(viaCore.dones);
        expect(viaBinding.actionCounts).toEqual(viaCore.counts);
      }
    }
  }, 600_000);

  it("rejects invalid actions without disturbing the episode", async () => {
    const control = await rolloutThroughBinding(0, 42);
    const env = await PackEnv.create({ datasetPath, taskIndex: 0 });
    const rand = mulberry32(42);
    const rewards: string[] = [];
    try {
      let injected = 0;
      while (!env.done) {
        const n = env.actionCount();
        if (injected < 3) {
          injected += 1;
          await expect(env.step(n + 5)).rejects.toThrow(EnvActionError);
          expect(env.actionCount()).toBe(n); // unchanged
        }
        const info = await env.step(randBelow(rand, n));
        rewards.push(info.reward);
      }
    } finally {
      await env.close();
    }
    expect(rewards).toEqual(control.rewards);
  }, 240_000);

  it("refuses to step a finished episode and supports reset", async () => {
    const env = await PackEnv.create({ datasetPath, taskIndex: 1 });
    const rand = mulberry32(7);
    try {
      while (!env.done) {
        await env.step(randBelow(rand, env.actionCount()));
      }
      await expect(env.step(0)).rejects.toThrow(EnvActionError);
      const fresh = await env.reset();
      expect(fresh.cumReward).toBe("0.000000000000");
      expect(fresh.phase).toBe("shape");
      expect(env.actionCount()).toBeGreaterThan(0);
    } finally {
      await env.close();
    }
  }, 240_000);

  it("serves pooled observation features on request", async () => {
    const env = await PackEnv.create({ datasetPath, taskIndex: 2, obs: "pooled:50" });
    try {
      expect(env.info.obs.pooled_box).toHaveLength(8);
      expect(env.info.obs.remaining!.length).toBe(env.actionCount());
    } finally {
      await env.close();
    }
  }, 240_000);
});
