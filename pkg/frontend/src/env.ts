import { spawn, type ChildProcessByStdio } from "node:child_process";
import { createInterface } from "node:readline";
import type { Readable, Writable } from "node:stream";

import { type EnvReply, type Mode, type StepInfo, toStepInfo } from "./protocol.js";

export interface PackEnvOptions {
  datasetPath: string;
  taskIndex: number;
  mode?: Mode;
  /** observation encoding: "none" | "counts" | "pooled:<cell>" */
  obs?: string;
  /** python interpreter used to host the core (default "python3") */
  python?: string;
}

/** Raised when the core rejects a request; the episode state is unchanged. */
export class EnvActionError extends Error {
  constructor(public readonly code: string, detail: string) {
    super(`${code}: ${detail}`);
    this.name = "EnvActionError";
  }
}

/**
 * One episode of the packing environment, hosted by the core process and
 * driven over a line-oriented JSON protocol. The binding is a transport
 * shim: every number it reports was produced by the core.
 */
export class PackEnv {
  private queue: EnvReply[] = [];
  private waiters: ((r: EnvReply) => void)[] = [];
  private closed = false;
  private last!: StepInfo;

  private constructor(private readonly proc: ChildProcessByStdio<Writable, Readable, null>) {
    const rl = createInterface({ input: proc.stdout });
    rl.on("line", (line) => {
      if (!line.trim()) return;
      const reply = JSON.parse(line) as EnvReply;
      const waiter = this.waiters.shift();
      if (waiter) waiter(reply);
      else this.queue.push(reply);
    });
    proc.on("exit", () => {
      this.closed = true;
      for (const w of this.waiters.splice(0)) {
        w({ type: "error", error: "ProcessExited", detail: "core process ended" });
      }
    });
  }

  static async create(opts: PackEnvOptions): Promise<PackEnv> {
    const args = [
      "-m", "packbench.cli", "env-stdio",
      "--dataset", opts.datasetPath,
      "--task", String(opts.taskIndex),
      "--mode", opts.mode ?? "vanilla",
      "--obs", opts.obs ?? "counts",
    ];
    const proc = spawn(opts.python ?? "python3", args, { stdio: ["pipe", "pipe", "inherit"] });
    const env = new PackEnv(proc);
    const ready = await env.nextReply();
    if (ready.type !== "ready") {
      throw new EnvActionError(ready.error ?? "BadHandshake", ready.detail ?? "no ready message");
    }
    env.last = toStepInfo(ready);
    return env;
  }

  private nextReply(): Promise<EnvReply> {
    const queued = this.queue.shift();
    if (queued) return Promise.resolve(queued);
    if (this.closed) {
      return Promise.resolve({ type: "error", error: "ProcessExited", detail: "core process ended" });
    }
    return new Promise((resolve) => this.waiters.push(resolve));
  }

  private send(obj: unknown): void {
    this.proc.stdin.write(JSON.stringify(obj) + "\n");
  }

  /** Restart the same task from an empty box. */
  async reset(): Promise<StepInfo> {
    this.send({ cmd: "reset" });
    const reply = await this.nextReply();
    if (reply.type === "error") throw new EnvActionError(reply.error ?? "Error", reply.detail ?? "");
    this.last = toStepInfo(reply);
    return this.last;
  }

  /** Apply one action. Invalid actions raise and leave the episode as it was. */
  async step(action: number): Promise<StepInfo> {
    this.send({ cmd: "step", action });
    const reply = await this.nextReply();
    if (reply.type === "error") {
      throw new EnvActionError(reply.error ?? "Error", reply.detail ?? "");
    }
    this.last = toStepInfo(reply);
    return this.last;
  }

  /** Number of legal actions in the current phase (0 once done). */
  actionCount(): number {
    return this.last.actionCount;
  }

  get phase(): string {
    return this.last.phase;
  }

  get done(): boolean {
    return this.last.done || this.last.phase === "done";
  }

  get info(): StepInfo {
    return this.last;
  }

  async close(): Promise<void> {
    if (this.closed) return;
    this.send({ cmd: "close" });
    await new Promise<void>((resolve) => {
      this.proc.once("exit", () => resolve());
      setTimeout(() => {
        this.proc.kill();
        resolve();
      }, 2000).unref();
    });
    this.closed = true;
  }
}
