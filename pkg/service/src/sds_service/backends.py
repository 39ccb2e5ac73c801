"""Gradient backends: the pretrained latent-diffusion model and a mock.

Both expose compute(image, prompt, seed, t_min, t_max, guidance_scale)
-> (grad HWC float32, t_used, loss_proxy) and a model_id string. Requests
are serialized by the caller; backends hold no per-request state.
"""

from __future__ import annotations

import threading

import numpy as np


class MockBackend:
    """Squared-distance-to-target gradients, for integration tests.

    Per-channel gradient 2*(x - target)/3 (optionally divided by the pixel
    count with reduction="mean"), so a client that replicates a grayscale
    image to RGB and channel-sums the result recovers exactly the
    in-process oracle gradient. The timestep is drawn from the request
    seed, uniform over [t_min, t_max].
    """

    def __init__(self, target_png: str, reduction: str = "sum"):
        from PIL import Image

        with Image.open(target_png) as im:
            self.target = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        if reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {reduction!r}")
        self.reduction = reduction
        self.model_id = f"mock:{target_png}"

    def compute(self, image, prompt, seed, t_min, t_max, guidance_scale):
        if image.shape != self.target.shape:
            raise ValueError(f"image {image.shape} vs target {self.target.shape}")
        rng = np.random.default_rng(seed)
        t_used = int(rng.integers(t_min, t_max + 1))
        scale = 1.0 / (image.shape[0] * image.shape[1]) if self.reduction == "mean" else 1.0
        diff = image - self.target
        grad = ((2.0 / 3.0) * scale * diff).astype(np.float32)
        loss = float(np.sum(diff * diff) * scale / 3.0)
        return grad, t_used, loss


class DiffusionBackend:
    """Score-distillation pixel gradients from a pretrained latent model.

    Per request, with everything seeded from the request seed: the image is
    VAE-encoded to z (grad enabled), noised at a uniformly drawn timestep,
    denoised once by the UNet under classifier-free guidance (no UNet
    backprop), and the residual w(t) * (eps_hat - eps) is pulled back to
    pixels through the encoder. w(t) = 1 - alpha_bar_t by default
    (w_scheme="sigma2"); "one" uses unit weighting.
    """

    def __init__(self, model_id: str, device: str = "cpu", w_scheme: str = "sigma2"):
        import torch
        from diffusers import StableDiffusionPipeline

        self.torch = torch
        self.device = device
        self.model_id = model_id
        if w_scheme not in ("sigma2", "one"):
            raise ValueError(f"unknown w_scheme {w_scheme!r}")
        self.w_scheme = w_scheme
        pipe = StableDiffusionPipeline.from_pretrained(
            model_id, safety_checker=None, requires_safety_checker=False
        )
        pipe = pipe.to(device)
        self.vae = pipe.vae.eval()
        self.unet = pipe.unet.eval()
        self.text_encoder = pipe.text_encoder.eval()
        self.tokenizer = pipe.tokenizer
        self.alphas_cumprod = pipe.scheduler.alphas_cumprod.to(device)
        for module in (self.vae, self.unet, self.text_encoder):
            for p in module.parameters():
                p.requires_grad_(False)
        self._embed_cache: dict[str, object] = {}
        self._lock = threading.Lock()

    def _embeddings(self, prompt: str):
        if prompt in self._embed_cache:
            return self._embed_cache[prompt]
        torch = self.torch
        with torch.no_grad():
            embeds = []
            for text in (prompt, ""):
                tokens = self.tokenizer(
                    text,
                    padding="max_length",
                    max_length=self.tokenizer.model_max_length,
                    truncation=True,
                    return_tensors="pt",
                ).input_ids.to(self.device)
                embeds.append(self.text_encoder(tokens)[0])
        pair = self.torch.cat(embeds)  # [conditional, unconditional]
        if len(self._embed_cache) < 64:
            self._embed_cache[prompt] = pair
        return pair

    def compute(self, image, prompt, seed, t_min, t_max, guidance_scale):
        torch = self.torch
        gen = torch.Generator(device=self.device).manual_seed(int(seed))
        t = int(
            torch.randint(int(t_min), int(t_max) + 1, (1,), generator=gen, device=self.device)
        )
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        x = x.permute(2, 0, 1)[None].to(self.device)
        x.requires_grad_(True)

        with torch.enable_grad():
            dist = self.vae.encode(x * 2.0 - 1.0).latent_dist
            z = dist.sample(generator=gen) * self.vae.config.scaling_factor

        alpha_bar = self.alphas_cumprod[t]
        noise = torch.randn(z.shape, generator=gen, device=self.device, dtype=z.dtype)
        z_t = alpha_bar.sqrt() * z + (1.0 - alpha_bar).sqrt() * noise

        embeds = self._embeddings(prompt)
        with torch.no_grad():
            latent_in = torch.cat([z_t.detach()] * 2)
            t_tensor = torch.tensor([t, t], device=self.device)
            eps = self.unet(latent_in, t_tensor, encoder_hidden_states=embeds).sample
            eps_text, eps_uncond = eps.chunk(2)
            eps_hat = eps_uncond + guidance_scale * (eps_text - eps_uncond)

        w = (1.0 - alpha_bar) if self.w_scheme == "sigma2" else torch.ones(())
        g_z = w * (eps_hat - noise)  # UNet Jacobian deliberately skipped
        (pixel_grad,) = torch.autograd.grad(z, x, grad_outputs=g_z)
        grad = pixel_grad[0].permute(1, 2, 0).detach().cpu().numpy().astype(np.float32)
        loss_proxy = float(((eps_hat - noise) ** 2).sum().item())
        return grad, t, loss_proxy
