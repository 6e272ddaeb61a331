/** Viewport state, split from rendering so it is testable headless.
 *
 * The model holds exactly what arrived from the service: a flat vertex
 * array and, per identity, a topology that is set once and reused across
 * every subsequent position update. Counters expose how often each kind of
 * upload happened; the tests pin "positions move, topology does not".
 */
export class ViewportModel {
  positions: Float64Array | null = null;
  topology: Int32Array | null = null;
  identity: string | null = null;
  version = 0;
  topologyUploads = 0;
  positionUploads = 0;

  setIdentity(identity: string, vertices: number[], topology: number[]): void {
    this.identity = identity;
    this.topology = Int32Array.from(topology);
    this.topologyUploads += 1;
    this.updatePositions(vertices);
  }

  updatePositions(vertices: number[]): void {
    this.positions = Float64Array.from(vertices);
    this.positionUploads += 1;
    this.version += 1;
  }

  get vertexCount(): number {
    return this.positions === null ? 0 : this.positions.length / 3;
  }
}
