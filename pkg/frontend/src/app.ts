// The chat client: a three-step single-page app (login, configure-or-reuse,
// chat) rendered with plain DOM. All durable state lives server-side; the
// only thing kept locally is the session token, so a hard refresh restores
// everything from the backend.

import {
  ApiClient,
  ApiError,
  AppConfig,
  ChatMessage,
  ModelEntry,
  SessionInfo,
  ThreadSummary,
} from "./api.js";

export type Phase = "logged-out" | "configuring" | "chatting";

export interface UiState {
  phase: Phase;
  session: SessionInfo | null;
  config: AppConfig | null;
  configForm: AppConfig | null;
  configExisted: boolean;
  reuseOffered: boolean;
  threads: ThreadSummary[];
  selectedThread: string | null;
  messages: ChatMessage[];
  retrievalModels: ModelEntry[];
  chatModels: ModelEntry[];
  selectedRetrievalModel: string | null;
  selectedChatModel: string | null;
  useRag: boolean;
  pending: boolean;
  error: string | null;
  notice: string | null;
}

export interface AppOptions {
  idpProviders?: string[];
  storage?: Storage;
}

const SESSION_KEY = "genpod.session";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: Array<Node | string> = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

function isValidUrl(value: string): boolean {
  try {
    new URL(value);
    return true;
  } catch {
    return false;
  }
}

export class ChatApp {
  state: UiState;
  private storage: Storage;
  private idpProviders: string[];

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    options: AppOptions = {},
  ) {
    this.storage = options.storage ?? window.sessionStorage;
    this.idpProviders = options.idpProviders ?? [""];
    this.state = {
      phase: "logged-out",
      session: null,
      config: null,
      configForm: null,
      configExisted: false,
      reuseOffered: false,
      threads: [],
      selectedThread: null,
      messages: [],
      retrievalModels: [],
      chatModels: [],
      selectedRetrievalModel: null,
      selectedChatModel: null,
      useRag: false,
      pending: false,
      error: null,
      notice: null,
    };
  }

  async start(): Promise<void> {
    const stored = this.storage.getItem(SESSION_KEY);
    if (stored) {
      try {
        const session = JSON.parse(stored) as SessionInfo;
        this.api.setToken(session.token);
        this.state.session = session;
        const { config, existed } = await this.api.getConfig();
        this.state.config = config;
        this.state.configForm = { ...config };
        this.state.configExisted = existed;
        if (existed) {
          await this.enterChat();
        } else {
          this.state.phase = "configuring";
        }
      } catch {
        this.storage.removeItem(SESSION_KEY);
        this.api.setToken(null);
        this.state.session = null;
        this.state.phase = "logged-out";
      }
    }
    this.render();
  }

  // -- transitions ----------------------------------------------------------

  private async handleLogin(idp: string, username: string, password: string): Promise<void> {
    this.state.error = null;
    this.state.pending = true;
    this.render();
    try {
      const session = await this.api.login(username, password, idp || undefined);
      this.state.session = session;
      this.storage.setItem(SESSION_KEY, JSON.stringify(session));
      const { config, existed } = await this.api.getConfig();
      this.state.config = config;
      this.state.configForm = { ...config };
      this.state.configExisted = existed;
      this.state.reuseOffered = existed;
      this.state.phase = "configuring";
    } catch (err) {
      this.state.error =
        err instanceof ApiError && err.status === 401
          ? "Invalid username or password."
          : `Login failed: ${err instanceof Error ? err.message : String(err)}`;
      this.state.phase = "logged-out";
    } finally {
      this.state.pending = false;
    }
    this.render();
  }

  private async handleSaveConfig(form: AppConfig): Promise<void> {
    this.state.error = null;
    if (!isValidUrl(form.retrieval_url) || !isValidUrl(form.llm_url)) {
      this.state.error = "Provider URLs must be absolute URLs.";
      this.render();
      return;
    }
    if (form.doc_source && !isValidUrl(form.doc_source)) {
      this.state.error = "Document source must be an absolute URL (or empty).";
      this.render();
      return;
    }
    this.state.pending = true;
    this.render();
    try {
      this.state.config = await this.api.putConfig(form);
      this.state.configForm = { ...this.state.config };
      this.state.configExisted = true;
      await this.enterChat();
    } catch (err) {
      this.state.error = `Could not save configuration: ${err instanceof Error ? err.message : String(err)}`;
    } finally {
      this.state.pending = false;
    }
    this.render();
  }

  private async enterChat(): Promise<void> {
    const models = await this.api.getModels();
    this.state.retrievalModels = models.filter((m) => m.provider === "retrieval");
    this.state.chatModels = models.filter((m) => m.provider === "llm");
    if (!this.state.retrievalModels.some((m) => m.id === this.state.selectedRetrievalModel)) {
      this.state.selectedRetrievalModel = this.state.retrievalModels[0]?.id ?? null;
    }
    if (!this.state.chatModels.some((m) => m.id === this.state.selectedChatModel)) {
      this.state.selectedChatModel = this.state.chatModels[0]?.id ?? null;
    }
    this.state.threads = await this.api.listThreads();
    this.state.selectedThread = null;
    this.state.messages = [];
    this.state.reuseOffered = false;
    this.state.phase = "chatting";
  }

  private async selectThread(threadId: string): Promise<void> {
    this.state.messages = await this.api.getMessages(threadId);
    this.state.selectedThread = threadId;
    this.state.notice = null;
    this.render();
  }

  private startNewConversation(): void {
    this.state.selectedThread = null;
    this.state.messages = [];
    this.state.notice = null;
    this.render();
  }

  private async deleteThread(threadId: string): Promise<void> {
    await this.api.deleteThread(threadId);
    this.state.threads = await this.api.listThreads();
    if (this.state.selectedThread === threadId) {
      this.state.selectedThread = null;
      this.state.messages = [];
    }
    this.render();
  }

  private logout(): void {
    this.storage.removeItem(SESSION_KEY);
    this.api.setToken(null);
    this.state.session = null;
    this.state.phase = "logged-out";
    this.state.threads = [];
    this.state.messages = [];
    this.state.selectedThread = null;
    this.render();
  }

  private async handleSend(): Promise<void> {
    const input = this.root.querySelector<HTMLTextAreaElement>('[data-testid="composer-input"]');
    const ragToggle = this.root.querySelector<HTMLInputElement>('[data-testid="rag-toggle"]');
    const chatModel = this.root.querySelector<HTMLInputElement>('input[name="chat-model"]:checked');
    const retrievalModel = this.root.querySelector<HTMLInputElement>(
      'input[name="retrieval-model"]:checked',
    );
    const content = input?.value.trim() ?? "";
    if (!content || this.state.pending) {
      return;
    }
    this.state.selectedChatModel = chatModel?.value ?? this.state.selectedChatModel;
    this.state.selectedRetrievalModel = retrievalModel?.value ?? this.state.selectedRetrievalModel;
    this.state.useRag = Boolean(ragToggle?.checked && !ragToggle?.disabled);
    if (!this.state.selectedChatModel) {
      this.state.error = "No chat model available.";
      this.render();
      return;
    }
    this.state.pending = true;
    this.state.error = null;
    this.state.notice = null;
    this.render();
    try {
      const wasNew = this.state.selectedThread === null;
      const result = await this.api.sendMessage({
        content,
        model: this.state.selectedChatModel,
        useRag: this.state.useRag,
        retrievalModel: this.state.selectedRetrievalModel ?? "bm25",
        threadId: this.state.selectedThread,
      });
      this.state.selectedThread = result.thread_id;
      this.state.messages = await this.api.getMessages(result.thread_id);
      if (wasNew) {
        this.state.threads = await this.api.listThreads();
      }
    } catch (err) {
      if (err instanceof ApiError && err.code === "retrieval_denied") {
        this.state.notice = "You are not authorised for this document source.";
      } else if (err instanceof ApiError && err.code === "no_doc_source") {
        this.state.notice = "Configure a document source before using retrieval.";
      } else {
        this.state.error = `Send failed: ${err instanceof Error ? err.message : String(err)}`;
      }
      if (this.state.selectedThread) {
        this.state.messages = await this.api.getMessages(this.state.selectedThread).catch(() => this.state.messages);
      }
      this.state.threads = await this.api.listThreads().catch(() => this.state.threads);
    } finally {
      this.state.pending = false;
    }
    this.render();
  }

  // -- views ----------------------------------------------------------------

  render(): void {
    this.root.innerHTML = "";
    const banner = this.state.error
      ? el("div", { class: "banner error", "data-testid": "error-banner" }, [this.state.error])
      : null;
    switch (this.state.phase) {
      case "logged-out":
        this.root.append(this.loginView(banner));
        break;
      case "configuring":
        this.root.append(this.configView(banner));
        break;
      case "chatting":
        this.root.append(this.chatLayout(banner));
        break;
    }
  }

  private loginView(banner: Node | null): HTMLElement {
    const provider = el("select", { "data-testid": "login-idp" });
    for (const idp of this.idpProviders) {
      provider.append(el("option", { value: idp }, [idp || "Default provider"]));
    }
    const username = el("input", { type: "text", placeholder: "username", "data-testid": "login-username" });
    const password = el("input", {
      type: "password",
      placeholder: "password",
      "data-testid": "login-password",
    });
    const submit = el("button", { "data-testid": "login-submit" }, ["Login"]);
    if (this.state.pending) {
      submit.setAttribute("disabled", "");
    }
    submit.addEventListener("click", () => {
      void this.handleLogin(provider.value, username.value, password.value);
    });
    const panel = el("div", { class: "panel login" }, [
      el("h1", {}, ["genpod chat"]),
      el("label", {}, ["Identity provider", provider]),
      username,
      password,
      submit,
    ]);
    if (banner) {
      panel.prepend(banner);
    }
    return panel;
  }

  private configView(banner: Node | null): HTMLElement {
    const panel = el("div", { class: "panel config" }, [el("h1", {}, ["Set up your chatbot"])]);
    if (banner) {
      panel.prepend(banner);
    }
    if (this.state.reuseOffered) {
      const reuse = el("button", { "data-testid": "reuse-config" }, ["Use existing configuration"]);
      reuse.addEventListener("click", () => {
        void this.enterChat().then(() => this.render());
      });
      const configure = el("button", { "data-testid": "configure-instead" }, ["Configure"]);
      configure.addEventListener("click", () => {
        this.state.reuseOffered = false;
        this.render();
      });
      panel.append(
        el("p", {}, ["A saved configuration was found in your pod."]),
        el("div", { class: "choice" }, [reuse, configure]),
      );
      return panel;
    }
    const form = this.state.configForm!;
    const retrievalType = el("input", { value: form.retrieval_api_type, "data-testid": "config-retrieval-type" });
    const retrievalUrl = el("input", { value: form.retrieval_url, "data-testid": "config-retrieval-url" });
    const llmType = el("input", { value: form.llm_api_type, "data-testid": "config-llm-type" });
    const llmUrl = el("input", { value: form.llm_url, "data-testid": "config-llm-url" });
    const docSource = el("input", {
      value: form.doc_source ?? "",
      placeholder: "optional: container to source documents from",
      "data-testid": "config-doc-source",
    });
    const save = el("button", { "data-testid": "config-save" }, ["Save configuration"]);
    if (this.state.pending) {
      save.setAttribute("disabled", "");
    }
    save.addEventListener("click", () => {
      void this.handleSaveConfig({
        retrieval_api_type: retrievalType.value.trim(),
        retrieval_url: retrievalUrl.value.trim(),
        llm_api_type: llmType.value.trim(),
        llm_url: llmUrl.value.trim(),
        doc_source: docSource.value.trim() ? docSource.value.trim() : null,
      });
    });
    panel.append(
      el("label", {}, ["Retrieval API type", retrievalType]),
      el("label", {}, ["Retrieval provider URL", retrievalUrl]),
      el("label", {}, ["LLM API type", llmType]),
      el("label", {}, ["LLM provider URL", llmUrl]),
      el("label", {}, ["Document source", docSource]),
      save,
    );
    return panel;
  }

  private chatLayout(banner: Node | null): HTMLElement {
    const layout = el("div", { class: "layout" }, [this.sidebar(), this.chatView()]);
    if (banner) {
      layout.prepend(banner);
    }
    return layout;
  }

  private sidebar(): HTMLElement {
    const threads = el("ul", { class: "threads", "data-testid": "thread-list" });
    for (const thread of this.state.threads) {
      const select = el(
        "button",
        {
          class: "thread-title" + (thread.id === this.state.selectedThread ? " selected" : ""),
          "data-testid": "thread-title",
          "data-thread-id": thread.id,
        },
        [thread.title],
      );
      select.addEventListener("click", () => {
        void this.selectThread(thread.id);
      });
      const remove = el("button", { class: "thread-delete", "data-testid": "thread-delete", title: "Delete" }, [
        "×",
      ]);
      remove.addEventListener("click", () => {
        void this.deleteThread(thread.id);
      });
      threads.append(el("li", {}, [select, remove]));
    }
    const newConversation = el("button", { "data-testid": "new-conversation" }, ["Start new conversation"]);
    newConversation.addEventListener("click", () => this.startNewConversation());

    const review = el("button", { "data-testid": "review-config" }, ["Review configuration"]);
    review.addEventListener("click", () => {
      this.state.reuseOffered = false;
      this.state.configForm = this.state.config ? { ...this.state.config } : this.state.configForm;
      this.state.phase = "configuring";
      this.render();
    });
    const logout = el("button", { "data-testid": "logout" }, ["Log out"]);
    logout.addEventListener("click", () => this.logout());

    const config = this.state.config;
    const summary = el("div", { class: "providers", "data-testid": "provider-summary" }, [
      el("div", {}, [`${config?.retrieval_api_type ?? ""} retrieval provider ${config?.retrieval_url ?? ""}`]),
      el("div", {}, [`${config?.llm_api_type ?? ""} LLM provider ${config?.llm_url ?? ""}`]),
    ]);

    return el("aside", { class: "sidebar" }, [
      el("div", { class: "whoami", "data-testid": "whoami" }, [this.state.session?.webid ?? ""]),
      logout,
      el("h2", {}, ["Chats"]),
      threads,
      newConversation,
      summary,
      review,
      el("h2", {}, ["Embedding models"]),
      this.radioGroup("retrieval-model", this.state.retrievalModels, this.state.selectedRetrievalModel),
      el("h2", {}, ["LLMs"]),
      this.radioGroup("chat-model", this.state.chatModels, this.state.selectedChatModel),
    ]);
  }

  private radioGroup(name: string, models: ModelEntry[], selected: string | null): HTMLElement {
    const group = el("div", { class: "radio-group", "data-testid": `radios-${name}` });
    for (const model of models) {
      const radio = el("input", {
        type: "radio",
        name,
        value: model.id,
        "data-testid": `radio-${name}-${model.id}`,
      });
      if (model.id === selected) {
        radio.setAttribute("checked", "");
        radio.checked = true;
      }
      radio.addEventListener("change", () => {
        if (name === "chat-model") {
          this.state.selectedChatModel = model.id;
        } else {
          this.state.selectedRetrievalModel = model.id;
        }
      });
      group.append(el("label", { class: "radio" }, [radio, model.display_name ?? model.id]));
    }
    return group;
  }

  private chatView(): HTMLElement {
    const messages = el("div", { class: "messages", "data-testid": "chat-messages" });
    for (const message of this.state.messages) {
      messages.append(this.messageView(message));
    }
    const notice = this.state.notice
      ? el("div", { class: "banner notice", "data-testid": "notice" }, [this.state.notice])
      : null;

    const input = el("textarea", {
      placeholder: "Type a message",
      "data-testid": "composer-input",
    });
    const ragToggle = el("input", { type: "checkbox", "data-testid": "rag-toggle" });
    if (this.state.useRag) {
      ragToggle.checked = true;
    }
    const ragEnabled = Boolean(this.state.config?.doc_source);
    if (!ragEnabled) {
      ragToggle.setAttribute("disabled", "");
    }
    const send = el("button", { "data-testid": "composer-send" }, ["Send"]);
    if (this.state.pending) {
      input.setAttribute("disabled", "");
      send.setAttribute("disabled", "");
    }
    send.addEventListener("click", () => {
      void this.handleSend();
    });

    const composer = el("div", { class: "composer" }, [
      input,
      el("label", { class: "rag" }, [ragToggle, "Use retrieval"]),
      send,
    ]);
    const pane = el("main", { class: "chat" }, [messages]);
    if (notice) {
      pane.append(notice);
    }
    pane.append(composer);
    return pane;
  }

  private messageView(message: ChatMessage): HTMLElement {
    const bubble = el(
      "div",
      {
        class: `message ${message.role}`,
        "data-testid": "message",
        "data-role": message.role,
        "data-seq": String(message.seq),
      },
      [el("div", { class: "content" }, [message.content])],
    );
    if (message.role === "assistant") {
      bubble.setAttribute("data-model", message.model ?? "");
      bubble.prepend(el("span", { class: "model-badge", "data-testid": "model-badge" }, [message.model ?? ""]));
      const citations = message.citations ?? [];
      if (citations.length > 0) {
        const chips = el("div", { class: "citations" });
        for (const citation of citations) {
          chips.append(
            el("span", { class: "citation-chip", "data-testid": "citation-chip", title: citation }, [
              citation.split("/").pop() ?? citation,
            ]),
          );
        }
        bubble.append(chips);
      }
    }
    return bubble;
  }
}
