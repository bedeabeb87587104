// DOM wiring. The app is a single page: a scene picker on the left, the
// working image and turn list on the right. All state transitions go
// through the pure helpers in state.ts; the server is the only source of
// scene imagery.

import { ApiClient, ApiError } from "./api.js";
import {
  ChatViewState,
  chatArrived,
  chatFailed,
  fromHistory,
  initialState,
  isPng,
  sendStarted,
  sessionStarted,
  toggleBefore,
} from "./state.js";

const BADGE_LABELS: Record<string, string> = {
  can: "accepted",
  cannot: "cannot",
  forbidden: "forbidden",
  invalid: "unparsed",
};

export class App {
  state: ChatViewState = initialState();

  constructor(
    private api: ApiClient,
    private root: Document,
  ) {}

  async boot(): Promise<void> {
    this.render();
    await this.loadScenes();
    const fromHash = this.root.defaultView?.location.hash.replace(/^#/, "");
    if (fromHash) {
      await this.resume(fromHash);
    }
  }

  private el<T extends HTMLElement>(id: string): T {
    const found = this.root.getElementById(id);
    if (!found) throw new Error(`missing element #${id}`);
    return found as T;
  }

  async loadScenes(): Promise<void> {
    const gallery = this.el<HTMLElement>("scene-gallery");
    try {
      const scenes = await this.api.listScenes();
      gallery.textContent = "";
      for (const scene of scenes) {
        const img = this.root.createElement("img");
        img.className = "scene-thumb";
        img.src = `data:image/png;base64,${scene.thumbnail_png_base64}`;
        img.title = scene.scene_id;
        img.dataset.sceneId = scene.scene_id;
        img.addEventListener("click", () => void this.startFromScene(scene.scene_id));
        gallery.appendChild(img);
      }
    } catch (e) {
      this.showError(`could not list scenes: ${(e as Error).message}`, null);
    }
  }

  async startFromScene(sceneId: string): Promise<void> {
    try {
      const info = await this.api.newSession({ scene_id: sceneId });
      this.state = sessionStarted(this.state, info.session_id, info.image_png_base64);
      this.rememberSession(info.session_id);
      this.render();
    } catch (e) {
      this.showError((e as Error).message, null);
    }
  }

  /** Client-side gate: only PNG files ever reach the server. */
  async startFromUpload(file: File): Promise<void> {
    if (!isPng(file)) {
      this.showError("only PNG files can be uploaded", null);
      this.render();
      return;
    }
    const b64 = await fileToBase64(file);
    try {
      const info = await this.api.newSession({ image_png_base64: b64 });
      this.state = sessionStarted(this.state, info.session_id, info.image_png_base64);
      this.rememberSession(info.session_id);
      this.render();
    } catch (e) {
      this.showError((e as Error).message, null);
    }
  }

  async resume(sessionId: string): Promise<void> {
    try {
      const history = await this.api.history(sessionId);
      this.state = fromHistory(sessionId, history);
      this.render();
    } catch {
      // stale hash (server restarted); fall back to the picker
      this.rememberSession(null);
    }
  }

  async send(instruction: string): Promise<void> {
    const sessionId = this.state.sessionId;
    if (!sessionId || this.state.pending || !instruction.trim()) return;
    this.state = sendStarted(this.state);
    this.render();
    try {
      const resp = await this.api.chat(sessionId, instruction);
      this.state = chatArrived(this.state, instruction, resp);
      this.el<HTMLInputElement>("instruction").value = "";
    } catch (e) {
      if (e instanceof ApiError) {
        const detail = e.word
          ? `${e.detail}: "${e.word}"`
          : e.detail;
        // validation errors are final; transport/server errors offer retry
        const retry = e.status >= 500 ? instruction : null;
        this.state = chatFailed(this.state, detail, retry);
      } else {
        this.state = chatFailed(this.state, (e as Error).message, instruction);
      }
    }
    this.render();
  }

  toggle(index: number): void {
    this.state = toggleBefore(this.state, index);
    this.render();
  }

  private showError(message: string, retry: string | null): void {
    this.state = chatFailed(this.state, message, retry);
    this.render();
  }

  private rememberSession(sessionId: string | null): void {
    const win = this.root.defaultView;
    if (win) win.location.hash = sessionId ?? "";
  }

  render(): void {
    const s = this.state;
    this.el<HTMLElement>("session-panel").style.display = s.sessionId ? "" : "none";
    const current = this.el<HTMLImageElement>("current-image");
    if (s.currentImage) {
      current.src = `data:image/png;base64,${s.currentImage}`;
    }
    const send = this.el<HTMLButtonElement>("send");
    send.disabled = s.pending || !s.sessionId;
    this.el<HTMLInputElement>("instruction").disabled = s.pending || !s.sessionId;

    const errorBox = this.el<HTMLElement>("error-box");
    errorBox.textContent = "";
    errorBox.style.display = s.error ? "" : "none";
    if (s.error) {
      const span = this.root.createElement("span");
      span.textContent = s.error;
      errorBox.appendChild(span);
      if (s.retryInstruction) {
        const retry = this.root.createElement("button");
        retry.id = "retry";
        retry.textContent = "retry";
        const instruction = s.retryInstruction;
        retry.addEventListener("click", () => void this.send(instruction));
        errorBox.appendChild(retry);
      }
    }

    const list = this.el<HTMLElement>("turns");
    list.textContent = "";
    s.turns.forEach((turn, i) => {
      const item = this.root.createElement("li");
      item.className = `turn turn-${turn.answerType}`;

      const q = this.root.createElement("p");
      q.className = "instruction";
      q.textContent = turn.instruction;
      item.appendChild(q);

      const badge = this.root.createElement("span");
      badge.className = `badge badge-${turn.answerType}`;
      badge.textContent = BADGE_LABELS[turn.answerType] ?? turn.answerType;
      item.appendChild(badge);

      const answer = this.root.createElement("p");
      answer.className = "answer";
      answer.textContent = turn.answerText; // verbatim, never paraphrased
      item.appendChild(answer);

      const images = this.root.createElement("div");
      images.className = "turn-images";
      if (turn.showBefore) {
        const before = this.root.createElement("img");
        before.className = "before-image";
        before.src = `data:image/png;base64,${turn.before}`;
        images.appendChild(before);
      }
      if (turn.image) {
        const after = this.root.createElement("img");
        after.className = "after-image";
        after.src = `data:image/png;base64,${turn.image}`;
        images.appendChild(after);
      }
      item.appendChild(images);

      const toggle = this.root.createElement("button");
      toggle.className = "toggle-before";
      toggle.textContent = turn.showBefore ? "hide before" : "show before";
      toggle.addEventListener("click", () => this.toggle(i));
      item.appendChild(toggle);

      const latency = this.root.createElement("span");
      latency.className = "latency";
      latency.textContent = `${turn.latencyMs.toFixed(0)} ms`;
      item.appendChild(latency);

      list.appendChild(item);
    });
  }
}

function fileToBase64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => {
      const url = reader.result as string;
      resolve(url.slice(url.indexOf(",") + 1));
    };
    reader.onerror = () => reject(reader.error);
    reader.readAsDataURL(file);
  });
}

export function wire(app: App, root: Document): void {
  const send = root.getElementById("send");
  const input = root.getElementById("instruction") as HTMLInputElement | null;
  send?.addEventListener("click", () => void app.send(input?.value ?? ""));
  input?.addEventListener("keydown", (ev) => {
    if ((ev as KeyboardEvent).key === "Enter") void app.send(input.value);
  });
  const upload = root.getElementById("upload") as HTMLInputElement | null;
  upload?.addEventListener("change", () => {
    const file = upload.files?.[0];
    if (file) void app.startFromUpload(file);
  });
}
