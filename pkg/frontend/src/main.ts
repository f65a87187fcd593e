/** Browser wiring: DOM, input capture, debounce, and frame display.
 *
 * The service URL comes from the ?service= query parameter (default: same
 * origin). Controls: WASD move, R/F up/down, drag to look, 1/2/3 switch
 * color / inverse-depth / opacity display.
 */

import { FrameRequester, fetchMeta, renderUrl } from "./net.js";
import { DisplayMode, handleInput, initialState, poseParam } from "./state.js";

const DEBOUNCE_MS = 80;
const RENDER_W = 512;
const RENDER_H = 384;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot() {
  const params = new URLSearchParams(window.location.search);
  const base = (params.get("service") ?? "").replace(/\/$/, "");
  const img = el<HTMLImageElement>("frame");
  const banner = el<HTMLDivElement>("banner");
  const modeLabel = el<HTMLSpanElement>("mode");

  let state = initialState();
  const requester = new FrameRequester((url) => fetch(url));

  function setBanner(text: string, cls = "") {
    banner.textContent = text;
    banner.className = cls;
  }

  try {
    const meta = await fetchMeta(base, (url) => fetch(url));
    state.boundsRadius = meta.pose_bounds_radius;
    setBanner(`connected: ${meta.n_layers} layers, ${meta.backend} backend`);
  } catch (err) {
    setBanner(`service unreachable: ${err}`, "error");
    return;
  }

  const keys = new Set<string>();
  let dragDx = 0;
  let dragDy = 0;
  let dragging = false;
  let lastX = 0;
  let lastY = 0;

  window.addEventListener("keydown", (e) => {
    const k = e.key.toLowerCase();
    if ("wasdrf".includes(k)) keys.add(k);
    if (k === "1" || k === "2" || k === "3") {
      const modes: DisplayMode[] = ["color", "inv_depth", "acc"];
      state = { ...state, mode: modes[Number(k) - 1] };
      modeLabel.textContent = state.mode;
      dirty = true;
    }
  });
  window.addEventListener("keyup", (e) => keys.delete(e.key.toLowerCase()));
  img.addEventListener("pointerdown", (e) => {
    dragging = true;
    lastX = e.clientX;
    lastY = e.clientY;
    img.setPointerCapture(e.pointerId);
  });
  img.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    dragDx += e.clientX - lastX;
    dragDy += e.clientY - lastY;
    lastX = e.clientX;
    lastY = e.clientY;
  });
  img.addEventListener("pointerup", () => (dragging = false));

  let dirty = true;
  let lastIssued = "";
  let debounceTimer: number | undefined;
  let lastTime = performance.now();

  function issueFrame() {
    const url = renderUrl(base, poseParam(state), RENDER_W, RENDER_H,
                          state.mode, "pinhole", state.fovDeg);
    if (url === lastIssued && requester.pending) return;
    lastIssued = url;
    state.pendingRequest = true;
    requester
      .request(url)
      .then((result) => {
        state.pendingRequest = requester.pending;
        if (result.stale || result.blob === null) {
          if (result.status === 422) {
            setBanner("pose outside the reconstruction volume", "warn");
          } else if (!result.stale && result.status !== 200) {
            setBanner(`render failed: HTTP ${result.status}`, "error");
          }
          return;
        }
        setBanner("");
        const old = img.src;
        img.src = URL.createObjectURL(result.blob);
        if (old.startsWith("blob:")) URL.revokeObjectURL(old);
      })
      .catch((err) => {
        state.pendingRequest = requester.pending;
        setBanner(`network failure: ${err}`, "error");
      });
  }

  function tick(now: number) {
    const dt = Math.min((now - lastTime) / 1000, 0.1);
    lastTime = now;
    const moved = keys.size > 0 || dragDx !== 0 || dragDy !== 0;
    if (moved) {
      state = handleInput(state, { keys, dragDx, dragDy }, dt);
      dragDx = 0;
      dragDy = 0;
      dirty = true;
    }
    if (dirty) {
      dirty = false;
      window.clearTimeout(debounceTimer);
      debounceTimer = window.setTimeout(issueFrame, DEBOUNCE_MS);
    }
    window.requestAnimationFrame(tick);
  }

  issueFrame();
  window.requestAnimationFrame(tick);
}

boot();
