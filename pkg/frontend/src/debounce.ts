// Debounced render submission: at most one in-flight request per panel, the
// newest gesture wins, superseded requests are aborted. Edits take seconds at
// toy scale, so a request per pixel of slider drag would pile up badly.

export interface RenderScheduler<TArgs, TResult> {
  submit(args: TArgs): void;
  flush(): Promise<void>;
  cancel(): void;
  inFlight(): boolean;
}

export function makeRenderScheduler<TArgs, TResult>(
  render: (args: TArgs, signal: AbortSignal) => Promise<TResult>,
  onResult: (args: TArgs, result: TResult) => void,
  onError: (error: unknown) => void,
  waitMs = 250,
): RenderScheduler<TArgs, TResult> {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let pending: { args: TArgs } | null = null;
  let controller: AbortController | null = null;
  let running: Promise<void> | null = null;

  async function run(): Promise<void> {
    while (pending) {
      const { args } = pending;
      pending = null;
      controller = new AbortController();
      try {
        const result = await render(args, controller.signal);
        // a newer gesture may have arrived while rendering; its result will
        // supersede this one on the next loop iteration
        onResult(args, result);
      } catch (err) {
        if (!(err instanceof DOMException && err.name === "AbortError")) {
          onError(err);
        }
      } finally {
        controller = null;
      }
    }
    running = null;
  }

  function fire() {
    timer = null;
    // newest request aborts whatever is still in flight
    controller?.abort();
    if (!running) {
      running = run();
    }
  }

  return {
    submit(args: TArgs) {
      pending = { args };
      if (timer) clearTimeout(timer);
      timer = setTimeout(fire, waitMs);
    },
    async flush() {
      if (timer) {
        clearTimeout(timer);
        fire();
      }
      while (running) {
        await running;
      }
    },
    cancel() {
      if (timer) clearTimeout(timer);
      timer = null;
      pending = null;
      controller?.abort();
    },
    inFlight() {
      return running !== null || timer !== null;
    },
  };
}
