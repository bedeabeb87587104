// Thin typed client for the /api/v1 chat service.

export interface SceneSummary {
  scene_id: string;
  thumbnail_png_base64: string;
}

export interface SessionInfo {
  session_id: string;
  image_png_base64: string;
}

export interface ChatResponse {
  answer_text: string;
  answer_type: string;
  image_png_base64: string | null;
  latency_ms: number;
}

export interface HistoryTurn {
  instruction: string;
  answer_text: string;
  answer_type: string;
  image_png_base64: string | null;
  latency_ms: number;
}

export interface HistoryResponse {
  session_id: string;
  current_image_png_base64: string;
  original_image_png_base64: string;
  turns: HistoryTurn[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
    public word?: string,
  ) {
    super(detail);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let detail = `${resp.status} ${resp.statusText}`;
  let word: string | undefined;
  try {
    const body = await resp.json();
    if (typeof body.detail === "string") detail = body.detail;
    if (typeof body.word === "string") word = body.word;
  } catch {
    /* non-JSON error body; keep the status text */
  }
  return new ApiError(resp.status, detail, word);
}

export class ApiClient {
  constructor(private base: string = "") {}

  private url(path: string): string {
    return `${this.base}/api/v1${path}`;
  }

  async listScenes(): Promise<SceneSummary[]> {
    const resp = await fetch(this.url("/scenes"));
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()).scenes;
  }

  async newSession(body: {
    scene_id?: string;
    image_png_base64?: string;
  }): Promise<SessionInfo> {
    const resp = await fetch(this.url("/session"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return resp.json();
  }

  async chat(sessionId: string, instruction: string): Promise<ChatResponse> {
    const resp = await fetch(this.url(`/session/${sessionId}/chat`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ instruction }),
    });
    if (!resp.ok) throw await parseError(resp);
    return resp.json();
  }

  async history(sessionId: string): Promise<HistoryResponse> {
    const resp = await fetch(this.url(`/session/${sessionId}/history`));
    if (!resp.ok) throw await parseError(resp);
    return resp.json();
  }
}
