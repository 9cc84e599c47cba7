// One evaluation pipeline per scenario panel: at most one request is in
// flight, rapid slider changes collapse to the newest pending request, and a
// response that arrives after a newer submission is discarded by sequence
// number instead of being rendered.

export class EvaluationChannel<Req, Res> {
  private seq = 0;
  private inFlight = false;
  private pending: { req: Req; seq: number } | null = null;

  constructor(
    private readonly send: (req: Req) => Promise<Res>,
    private readonly deliver: (res: Res, req: Req, seq: number) => void,
    private readonly fail: (error: unknown, req: Req, seq: number) => void,
  ) {}

  get sequence(): number {
    return this.seq;
  }

  submit(req: Req): number {
    this.seq += 1;
    this.pending = { req, seq: this.seq };
    void this.pump();
    return this.seq;
  }

  private async pump(): Promise<void> {
    if (this.inFlight || this.pending === null) return;
    const { req, seq } = this.pending;
    this.pending = null;
    this.inFlight = true;
    try {
      const res = await this.send(req);
      if (seq === this.seq) this.deliver(res, req, seq);
    } catch (error) {
      if (seq === this.seq) this.fail(error, req, seq);
    } finally {
      this.inFlight = false;
      void this.pump();
    }
  }
}
