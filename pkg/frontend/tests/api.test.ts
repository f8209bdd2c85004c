import { describe, expect, it } from 'vitest';

import { ApiClient, ApiError } from '../src/api.js';

function fakeFetch(status: number, body: unknown) {
  const calls: Array<{ url: string; init?: RequestInit }> = [];
  const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    return new Response(JSON.stringify(body), {
      status,
      headers: { 'Content-Type': 'application/json' },
    });
  };
  return { fetchFn, calls };
}

describe('ApiClient', () => {
  it('posts ask payloads with question, context and k', async () => {
    const { fetchFn, calls } = fakeFetch(200, {
      status: 'ok', answer: 'a', expanded_question: 'q+', sources: [],
      latency_ms: 5, index_version: 1,
    });
    const client = new ApiClient('', fetchFn);
    const resp = await client.ask('q', 'news', 2);
    expect(resp.status).toBe('ok');
    expect(calls[0].url).toBe('/api/ask');
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      question: 'q', context: 'news', k: 2,
    });
  });

  it('omits optional fields when unset', async () => {
    const { fetchFn, calls } = fakeFetch(200, {
      status: 'ok', answer: '', expanded_question: '', sources: [],
      latency_ms: 1, index_version: 1,
    });
    await new ApiClient('', fetchFn).ask('just q');
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({ question: 'just q' });
  });

  it('encodes block ids in the path', async () => {
    const { fetchFn, calls } = fakeFetch(200, {
      block_id: 'x', doc_id: 'd', seq: 0, header: 'h', text: 't',
      byte_span: [0, 1], metadata: { keywords: [], char_count: 1, created_at: '' },
    });
    await new ApiClient('', fetchFn).block('a/b c');
    expect(calls[0].url).toBe('/api/blocks/a%2Fb%20c');
  });

  it('raises ApiError with the server detail on failure', async () => {
    const { fetchFn } = fakeFetch(404, { detail: "unknown context 'x'" });
    const client = new ApiClient('', fetchFn);
    await expect(client.ask('q', 'x')).rejects.toThrowError(ApiError);
    await expect(client.ask('q', 'x')).rejects.toMatchObject({
      status: 404,
      message: "unknown context 'x'",
    });
  });

  it('prefixes a base url', async () => {
    const { fetchFn, calls } = fakeFetch(200, { status: 'ok' });
    await new ApiClient('http://svc:8470', fetchFn).health();
    expect(calls[0].url).toBe('http://svc:8470/api/health');
  });
});
