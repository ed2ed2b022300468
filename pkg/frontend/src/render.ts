/** Minimal canvas renderer: orbit camera, painter-sorted flat-shaded
 * triangles, joints as discs, bones as segments, optional per-vertex
 * heatmap colors.  Pure math lives in exported helpers so it is testable
 * without a DOM. */

import { cssColor, heatColor } from "./colormap.js";
import type { MeshResponse, SkeletonResponse } from "./api.js";

export interface Camera {
  yaw: number; // radians around the vertical axis
  pitch: number;
  distance: number;
  target: [number, number, number];
}

export function defaultCamera(): Camera {
  return { yaw: 0.6, pitch: 0.35, distance: 2.6, target: [0, 0, 0] };
}

export type Vec3 = [number, number, number];

/** World -> camera-space transform for the orbit camera. */
export function toCamera(p: Vec3, cam: Camera): Vec3 {
  const cy = Math.cos(cam.yaw);
  const sy = Math.sin(cam.yaw);
  const cp = Math.cos(cam.pitch);
  const sp = Math.sin(cam.pitch);
  const x = p[0] - cam.target[0];
  const y = p[1] - cam.target[1];
  const z = p[2] - cam.target[2];
  // yaw about z (up axis), then pitch about the new x
  const x1 = cy * x + sy * y;
  const y1 = -sy * x + cy * y;
  const y2 = cp * y1 + sp * z;
  const z2 = -sp * y1 + cp * z;
  return [x1, y2 + cam.distance, z2];
}

/** Perspective projection to canvas pixels; returns null behind the camera. */
export function project(p: Vec3, cam: Camera, width: number, height: number): [number, number, number] | null {
  const [x, depth, z] = toCamera(p, cam);
  if (depth <= 1e-6) {
    return null;
  }
  const f = (0.9 * Math.min(width, height)) / 1.0;
  return [width / 2 + (f * x) / depth, height / 2 - (f * z) / depth, depth];
}

interface DrawTri {
  pts: [number, number][];
  depth: number;
  shade: number;
  color: string | null;
}

export class Renderer {
  camera = defaultCamera();
  private dragging = false;
  private lastX = 0;
  private lastY = 0;

  constructor(private canvas: HTMLCanvasElement) {
    canvas.addEventListener("mousedown", (e) => {
      this.dragging = true;
      this.lastX = e.clientX;
      this.lastY = e.clientY;
    });
    window.addEventListener("mouseup", () => (this.dragging = false));
    window.addEventListener("mousemove", (e) => {
      if (!this.dragging) {
        return;
      }
      this.camera.yaw += (e.clientX - this.lastX) * 0.01;
      this.camera.pitch = Math.min(1.4, Math.max(-1.4, this.camera.pitch + (e.clientY - this.lastY) * 0.01));
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      this.onCameraChange?.();
    });
    canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.camera.distance = Math.min(8, Math.max(0.8, this.camera.distance * (e.deltaY > 0 ? 1.1 : 0.9)));
      this.onCameraChange?.();
    });
  }

  onCameraChange: (() => void) | null = null;

  draw(
    mesh: MeshResponse | null,
    skeleton: SkeletonResponse | null,
    vertexColors: string[] | null,
    wireframe: boolean,
  ): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) {
      return;
    }
    const { width, height } = this.canvas;
    ctx.fillStyle = "#14161a";
    ctx.fillRect(0, 0, width, height);
    if (mesh) {
      this.drawMesh(ctx, mesh, vertexColors, wireframe, width, height);
    }
    if (skeleton) {
      this.drawSkeleton(ctx, skeleton, width, height);
    }
  }

  private drawMesh(
    ctx: CanvasRenderingContext2D,
    mesh: MeshResponse,
    vertexColors: string[] | null,
    wireframe: boolean,
    width: number,
    height: number,
  ): void {
    const cam = this.camera;
    const projected = mesh.vertices.map((v) => project(v as Vec3, cam, width, height));
    const light: Vec3 = [0.4, -0.7, 0.58];
    const tris: DrawTri[] = [];
    for (const t of mesh.triangles) {
      const pa = projected[t[0]];
      const pb = projected[t[1]];
      const pc = projected[t[2]];
      if (!pa || !pb || !pc) {
        continue;
      }
      const a = mesh.vertices[t[0]];
      const b = mesh.vertices[t[1]];
      const c = mesh.vertices[t[2]];
      const u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
      const v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
      const n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
      const len = Math.hypot(n[0], n[1], n[2]) || 1;
      const shade = Math.abs((n[0] * light[0] + n[1] * light[1] + n[2] * light[2]) / len);
      tris.push({
        pts: [
          [pa[0], pa[1]],
          [pb[0], pb[1]],
          [pc[0], pc[1]],
        ],
        depth: (pa[2] + pb[2] + pc[2]) / 3,
        shade,
        color: vertexColors ? vertexColors[t[0]] : null,
      });
    }
    tris.sort((x, y) => y.depth - x.depth);
    for (const t of tris) {
      ctx.beginPath();
      ctx.moveTo(t.pts[0][0], t.pts[0][1]);
      ctx.lineTo(t.pts[1][0], t.pts[1][1]);
      ctx.lineTo(t.pts[2][0], t.pts[2][1]);
      ctx.closePath();
      if (t.color) {
        ctx.fillStyle = t.color;
        ctx.globalAlpha = 0.35 + 0.65 * t.shade;
      } else {
        const g = Math.round(70 + 140 * t.shade);
        ctx.fillStyle = `rgb(${g},${g + 8},${g + 16})`;
        ctx.globalAlpha = 1.0;
      }
      ctx.fill();
      ctx.globalAlpha = 1.0;
      if (wireframe) {
        ctx.strokeStyle = "rgba(0,0,0,0.25)";
        ctx.stroke();
      }
    }
  }

  private drawSkeleton(
    ctx: CanvasRenderingContext2D,
    skeleton: SkeletonResponse,
    width: number,
    height: number,
  ): void {
    const cam = this.camera;
    const pts = skeleton.joints.map((j) => project([j.x, j.y, j.z], cam, width, height));
    ctx.lineWidth = 2.5;
    ctx.strokeStyle = "#4db4ff";
    for (const [p, c] of skeleton.bones) {
      const a = pts[p];
      const b = pts[c];
      if (!a || !b) {
        continue;
      }
      ctx.beginPath();
      ctx.moveTo(a[0], a[1]);
      ctx.lineTo(b[0], b[1]);
      ctx.stroke();
    }
    pts.forEach((p, i) => {
      if (!p) {
        return;
      }
      ctx.beginPath();
      ctx.arc(p[0], p[1], i === skeleton.root ? 7 : 4.5, 0, 2 * Math.PI);
      ctx.fillStyle = i === skeleton.root ? "#ff5757" : "#46df7c";
      ctx.fill();
    });
  }
}

/** Per-vertex CSS colors for a bone's weights on the fixed ramp. */
export function heatmapColors(weights: number[][], bone: number): string[] {
  return weights.map((row) => cssColor(heatColor(row[bone] ?? 0)));
}
