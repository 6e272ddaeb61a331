/** three.js binding for the viewport model (browser only).
 *
 * Geometry is built once per identity from the fetched topology; compose
 * responses only rewrite the position buffer. Nothing here recomputes
 * vertex data, matching the model's upload counters.
 */
import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { ViewportModel } from "./viewport.js";

export class MeshView {
  private readonly renderer: THREE.WebGLRenderer;
  private readonly scene = new THREE.Scene();
  private readonly camera: THREE.PerspectiveCamera;
  private readonly controls: OrbitControls;
  private mesh: THREE.Mesh | null = null;
  private modelVersion = -1;
  private boundIdentity: string | null = null;

  constructor(private readonly canvas: HTMLCanvasElement,
              private readonly model: ViewportModel) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(
      40, canvas.clientWidth / Math.max(canvas.clientHeight, 1), 0.01, 100);
    this.camera.position.set(0, 0.2, 2.4);
    this.controls = new OrbitControls(this.camera, canvas);
    this.scene.background = new THREE.Color(0x10131a);
    const key = new THREE.DirectionalLight(0xffffff, 2.2);
    key.position.set(1, 1, 2);
    this.scene.add(key, new THREE.AmbientLight(0xffffff, 0.35));
    this.loop();
  }

  private rebuildGeometry(): void {
    if (this.model.positions === null || this.model.topology === null) return;
    if (this.mesh !== null) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
    }
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute(
      "position", new THREE.BufferAttribute(Float32Array.from(this.model.positions), 3));
    geometry.setIndex(Array.from(this.model.topology));
    geometry.computeVertexNormals();
    const material = new THREE.MeshStandardMaterial(
      { color: 0xcdb9a0, flatShading: false, side: THREE.DoubleSide });
    this.mesh = new THREE.Mesh(geometry, material);
    this.scene.add(this.mesh);
    this.boundIdentity = this.model.identity;
  }

  private refreshPositions(): void {
    if (this.mesh === null || this.model.positions === null) return;
    const attr = this.mesh.geometry.getAttribute("position") as THREE.BufferAttribute;
    (attr.array as Float32Array).set(Float32Array.from(this.model.positions));
    attr.needsUpdate = true;
    this.mesh.geometry.computeVertexNormals();
  }

  private loop = (): void => {
    if (this.model.version !== this.modelVersion) {
      if (this.model.identity !== this.boundIdentity) this.rebuildGeometry();
      else this.refreshPositions();
      this.modelVersion = this.model.version;
    }
    this.resize();
    this.controls.update();
    this.renderer.render(this.scene, this.camera);
    requestAnimationFrame(this.loop);
  };

  private resize(): void {
    const w = this.canvas.clientWidth;
    const h = this.canvas.clientHeight;
    if (this.canvas.width !== w || this.canvas.height !== h) {
      this.renderer.setSize(w, h, false);
      this.camera.aspect = w / Math.max(h, 1);
      this.camera.updateProjectionMatrix();
    }
  }
}
