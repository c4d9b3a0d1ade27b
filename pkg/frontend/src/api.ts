// Typed client for the chat orchestrator's /api. The UI never talks to the
// pod, retrieval, or gateway services directly.

export interface SessionInfo {
  token: string;
  webid: string;
}

export interface AppConfig {
  retrieval_api_type: string;
  retrieval_url: string;
  llm_api_type: string;
  llm_url: string;
  doc_source: string | null;
}

export interface ConfigResponse {
  config: AppConfig;
  existed: boolean;
}

export interface ThreadSummary {
  id: string;
  title: string;
  created: string;
}

export interface ChatMessage {
  seq: number;
  role: "user" | "assistant";
  content: string;
  timestamp: string;
  model?: string;
  citations?: string[];
}

export interface ModelEntry {
  provider: "retrieval" | "llm";
  id: string;
  kind?: string;
  display_name?: string;
}

export interface SendResult {
  thread_id: string;
  messages: ChatMessage[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class ApiClient {
  private token: string | null = null;

  constructor(private baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  setToken(token: string | null): void {
    this.token = token;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
    }
    if (this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, {
        method,
        headers,
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, "unreachable", `chat service unreachable: ${String(err)}`);
    }
    if (response.status === 204) {
      return undefined as T;
    }
    const text = await response.text();
    let payload: unknown = null;
    try {
      payload = text ? JSON.parse(text) : null;
    } catch {
      payload = null;
    }
    if (!response.ok) {
      const record = (payload ?? {}) as { error?: string; detail?: string };
      throw new ApiError(response.status, record.error ?? "error", record.detail ?? text);
    }
    return payload as T;
  }

  async login(username: string, password: string, idp?: string): Promise<SessionInfo> {
    const session = await this.request<SessionInfo>("POST", "/api/login", {
      username,
      password,
      ...(idp ? { idp } : {}),
    });
    this.token = session.token;
    return session;
  }

  getConfig(): Promise<ConfigResponse> {
    return this.request("GET", "/api/config");
  }

  async putConfig(config: AppConfig): Promise<AppConfig> {
    const result = await this.request<{ config: AppConfig }>("PUT", "/api/config", config);
    return result.config;
  }

  async getModels(): Promise<ModelEntry[]> {
    const result = await this.request<{ models: ModelEntry[] }>("GET", "/api/models");
    return result.models;
  }

  async listThreads(): Promise<ThreadSummary[]> {
    const result = await this.request<{ threads: ThreadSummary[] }>("GET", "/api/threads");
    return result.threads;
  }

  async getMessages(threadId: string): Promise<ChatMessage[]> {
    const result = await this.request<{ messages: ChatMessage[] }>(
      "GET",
      `/api/threads/${encodeURIComponent(threadId)}/messages`,
    );
    return result.messages;
  }

  sendMessage(options: {
    content: string;
    model: string;
    useRag: boolean;
    retrievalModel: string;
    threadId?: string | null;
  }): Promise<SendResult> {
    const body = {
      content: options.content,
      model: options.model,
      use_rag: options.useRag,
      retrieval_model: options.retrievalModel,
    };
    if (options.threadId) {
      return this.request("POST", `/api/threads/${encodeURIComponent(options.threadId)}/messages`, body);
    }
    return this.request("POST", "/api/threads", body);
  }

  deleteThread(threadId: string): Promise<void> {
    return this.request("DELETE", `/api/threads/${encodeURIComponent(threadId)}`);
  }
}
